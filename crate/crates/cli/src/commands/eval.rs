use std::path::Path;

use anyhow::Result;

use scpnet_core::checkpoint::CheckpointMeta;
use scpnet_core::data::ImagePipeline;
use scpnet_core::evaluation::{
    distance_matrix, evaluate, extract_features, read_features, write_features, FeatureGallery,
};
use scpnet_core::Model;

use super::{load_checkpoint, load_images};
use crate::args::{EvalArgs, ExtractArgs, OcclusionArgs};
use crate::config::usage;

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    check_batch(args.batch_size)?;
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    let q = features(&model, &meta, &args.query, &args.occlusion, args.batch_size)?;
    let no_occlusion = OcclusionArgs {
        occlude: None,
        ..args.occlusion.clone()
    };
    let g = features(&model, &meta, &args.gallery, &no_occlusion, args.batch_size)?;
    let d = distance_matrix(&q, &g, args.mode.into())?;
    let report = evaluate(d.view(), &q.labels, &g.labels, &q.cameras, &g.cameras, args.exclusion.into())?;
    if let Some(out) = &args.out {
        report.write_csv(out)?;
    }
    println!("{}", report.summary_text());
    Ok(())
}

pub fn run_extract(args: &ExtractArgs) -> Result<()> {
    check_batch(args.batch_size)?;
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    let gallery = features(&model, &meta, &args.images, &args.occlusion, args.batch_size)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_features(&args.out, &gallery)?;
    println!(
        "wrote {} features of dimension {} to {}",
        gallery.len(),
        gallery.dim(),
        args.out.display()
    );
    Ok(())
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    Ok(())
}

/// Features from an image directory, or from a file written by `extract`.
fn features(
    model: &Model,
    meta: &CheckpointMeta,
    source: &Path,
    occlusion: &OcclusionArgs,
    batch: usize,
) -> Result<FeatureGallery> {
    if source.is_file() {
        if occlusion.occlude.is_some() {
            return Err(usage(format!(
                "{} is a feature file; occlusion applies to image directories only",
                source.display()
            )));
        }
        let gallery = read_features(source)?;
        if gallery.dim() != model.config().global_dim() {
            return Err(usage(format!(
                "{} holds {}-dimensional features but the checkpoint produces {}",
                source.display(),
                gallery.dim(),
                model.config().global_dim()
            )));
        }
        return Ok(gallery);
    }
    let samples = occlusion.apply(load_images(source)?)?;
    let pipeline = ImagePipeline::for_model(&meta.model, meta.normalization);
    Ok(extract_features(model, &samples, &pipeline, batch)?)
}
