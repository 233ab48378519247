use std::fs;

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use scpnet_core::data::{generate_synthetic, partial_split, split_by_identity, write_directory, SyntheticSpec};

use super::{check_fraction, require_empty, sha256_hex};
use crate::args::{PartialInput, Preset, SynthArgs};
use crate::config::{usage, MANIFEST};

pub fn run(args: &SynthArgs) -> Result<()> {
    require_empty(&args.out)?;
    let fraction = args.occlusion.occlude.unwrap_or(1.0);
    check_fraction(fraction)?;
    if args.occlusion.partial != PartialInput::Rescale {
        return Err(usage("synth writes rescaled partial queries only; use `eval --partial pad` instead"));
    }
    if args.test_ids > 0 && (args.queries_per_id == 0 || args.queries_per_id >= args.per_id as usize) {
        return Err(usage(format!(
            "--queries-per-id must be between 1 and {} so every test identity keeps gallery images",
            args.per_id - 1
        )));
    }

    let ids = (args.ids + args.test_ids) as usize;
    let spec = match args.preset {
        Preset::Desk => SyntheticSpec::desk(ids, args.per_id as usize),
        Preset::Clean => SyntheticSpec::clean(ids, args.per_id as usize),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let all = generate_synthetic(&spec, &mut rng);
    let last_train = spec.first_identity + args.ids - 1;
    let (train, test) = split_by_identity(all, |id| id <= last_train);

    let mut splits = vec![("train", train)];
    if args.test_ids > 0 {
        let (query, gallery) = partial_split(&test, args.queries_per_id, fraction, args.occlusion.anchor.into())?;
        splits.push(("query", query));
        splits.push(("gallery", gallery));
    }

    let mut files = Vec::new();
    let mut counts = serde_json::Map::new();
    let mut all_hashes = String::new();
    for (name, samples) in &mut splits {
        let dir = args.out.join(*name);
        for file in write_directory(&dir, samples)? {
            let hash = sha256_hex(&fs::read(dir.join(&file))?);
            all_hashes.push_str(&hash);
            files.push(json!({ "path": format!("{name}/{file}"), "sha256": hash }));
        }
        counts.insert(name.to_string(), samples.len().into());
    }
    let manifest = json!({
        "generator": "scpnet synth",
        "seed": args.seed,
        "spec": spec,
        "test_identities": args.test_ids,
        "queries_per_identity": args.queries_per_id,
        "query_visible_fraction": fraction,
        "query_anchor": scpnet_core::data::VisibleAnchor::from(args.occlusion.anchor),
        "counts": counts,
        "digest": sha256_hex(all_hashes.as_bytes()),
        "files": files,
    });
    fs::write(args.out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let summary: Vec<String> = splits.iter().map(|(n, s)| format!("{} {n}", s.len())).collect();
    println!("wrote {} images to {}", summary.join(", "), args.out.display());
    Ok(())
}
