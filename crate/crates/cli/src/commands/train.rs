use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use scpnet_core::data::{LabelSpace, Normalization};
use scpnet_core::evaluation::{distance_matrix, evaluate, extract_features, RankingReport};
use scpnet_core::training::{load_train_checkpoint, TrainState, LAST_CHECKPOINT};
use scpnet_core::{build_model, data::ImagePipeline, Model, Trainer};

use super::{load_images, sha256_hex};
use crate::args::TrainArgs;
use crate::config::{runs_root, usage, RunConfig, MANIFEST, RESOLVED_CONFIG};

pub fn run(args: &TrainArgs) -> Result<()> {
    let (model, state, cfg, run_dir, finished) = match &args.resume {
        Some(from) => resume(from, args.until_step)?,
        None => {
            let path = args.config.as_deref().expect("clap requires --config without --resume");
            let cfg = RunConfig::load(path)?;
            let run_dir = runs_root().join(cfg.run_name(args.name.as_deref(), path));
            let (model, state, cfg, finished) = train_run(cfg, &run_dir, args.until_step)?;
            (model, state, cfg, run_dir, finished)
        }
    };
    println!("run directory: {}", run_dir.display());
    if finished && !args.no_eval {
        if let Some(report) = evaluate_model(&model, state.normalization, &cfg)? {
            report.write_csv(&run_dir.join("eval"))?;
            println!("{}", report.summary_text());
        }
    }
    Ok(())
}

/// Trains a fresh run into `run_dir`, which must be missing or empty.
/// Returns the trained model, its state, the resolved config, and whether
/// the schedule ran to the end.
pub fn train_run(
    mut cfg: RunConfig,
    run_dir: &Path,
    until_step: Option<u64>,
) -> Result<(Model, TrainState, RunConfig, bool)> {
    if !cfg.data.train.is_dir() {
        return Err(usage(format!(
            "training directory {} does not exist",
            cfg.data.train.display()
        )));
    }
    super::require_empty(run_dir)?;
    let samples = load_images(&cfg.data.train)?;
    cfg.model.num_identities = LabelSpace::from_samples(&samples).len();
    cfg.model.validate()?;

    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let resolved = cfg.to_toml()?;
    fs::write(run_dir.join(RESOLVED_CONFIG), &resolved)?;
    let manifest = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": sha256_hex(resolved.as_bytes()),
        "train_images": samples.len(),
        "identities": cfg.model.num_identities,
    });
    fs::write(run_dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mut model = build_model(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(&mut model, &samples, &cfg.train)?.with_run_dir(run_dir);
    trainer.run(until_step)?;
    let finished = trainer.state().step >= trainer.total_steps();
    let state = trainer.state().clone();
    Ok((model, state, cfg, finished))
}

fn resume(from: &Path, until_step: Option<u64>) -> Result<(Model, TrainState, RunConfig, PathBuf, bool)> {
    let ckpt = if from.is_dir() { from.join(LAST_CHECKPOINT) } else { from.to_path_buf() };
    if !ckpt.is_file() {
        return Err(usage(format!("no checkpoint at {}", ckpt.display())));
    }
    let run_dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = RunConfig::load(&run_dir.join(RESOLVED_CONFIG))?;
    let samples = load_images(&cfg.data.train)?;
    let resumed = load_train_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    if resumed.config != cfg.train {
        return Err(usage(format!(
            "{} does not match the training section of {}",
            ckpt.display(),
            run_dir.join(RESOLVED_CONFIG).display()
        )));
    }
    let mut model = resumed.model;
    let mut trainer = Trainer::resume(&mut model, &samples, &resumed.config, resumed.state)?.with_run_dir(&run_dir);
    trainer.run(until_step)?;
    let finished = trainer.state().step >= trainer.total_steps();
    let state = trainer.state().clone();
    Ok((model, state, cfg, run_dir, finished))
}

/// Evaluates on the config's query and gallery directories, if set.
pub fn evaluate_model(model: &Model, normalization: Normalization, cfg: &RunConfig) -> Result<Option<RankingReport>> {
    let Some((query_dir, gallery_dir)) = cfg.eval_dirs() else {
        return Ok(None);
    };
    let pipeline = ImagePipeline::for_model(model.config(), normalization);
    let queries = super::apply_occlusion(
        load_images(query_dir)?,
        cfg.eval.occlude,
        cfg.eval.anchor,
        cfg.eval.partial_mode,
    )?;
    let gallery = load_images(gallery_dir)?;
    let q = extract_features(model, &queries, &pipeline, cfg.eval.batch_size)?;
    let g = extract_features(model, &gallery, &pipeline, cfg.eval.batch_size)?;
    let d = distance_matrix(&q, &g, cfg.eval.mode)?;
    Ok(Some(evaluate(d.view(), &q.labels, &g.labels, &q.cameras, &g.cameras, cfg.eval.exclusion)?))
}
