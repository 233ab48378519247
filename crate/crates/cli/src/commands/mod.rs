mod activmap;
mod eval;
mod sweep;
mod synth;
mod train;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use scpnet_core::checkpoint::{load_model, CheckpointMeta};
use scpnet_core::data::{load_directory, occlude_with, LabeledSample, NamingScheme, PartialMode, VisibleAnchor};
use scpnet_core::Model;

use crate::args::{Command, OcclusionArgs};
use crate::config::usage;

pub use sweep::SweepRow;
pub use train::{evaluate_model, train_run};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => eval::run_eval(&a),
        Command::Extract(a) => eval::run_extract(&a),
        Command::Activmap(a) => activmap::run(&a),
        Command::Sweep(a) => sweep::run(&a),
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    let (model, meta, _) = load_model(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((model, meta))
}

pub(crate) fn load_images(dir: &Path) -> Result<Vec<LabeledSample>> {
    if !dir.is_dir() {
        return Err(usage(format!("image directory {} does not exist", dir.display())));
    }
    Ok(load_directory(dir, NamingScheme::Market)?)
}

pub(crate) fn apply_occlusion(
    samples: Vec<LabeledSample>,
    fraction: Option<f32>,
    anchor: VisibleAnchor,
    mode: PartialMode,
) -> Result<Vec<LabeledSample>> {
    let Some(fraction) = fraction else {
        return Ok(samples);
    };
    check_fraction(fraction)?;
    samples
        .iter()
        .map(|s| Ok(occlude_with(s, fraction, anchor, mode)?))
        .collect()
}

impl OcclusionArgs {
    pub(crate) fn apply(&self, samples: Vec<LabeledSample>) -> Result<Vec<LabeledSample>> {
        apply_occlusion(samples, self.occlude, self.anchor.into(), self.partial.into())
    }
}

pub(crate) fn check_fraction(fraction: f32) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(usage(format!("--occlude {fraction} outside (0, 1]")));
    }
    Ok(())
}

/// Errors unless `dir` is missing or an empty directory.
pub(crate) fn require_empty(dir: &Path) -> Result<()> {
    if dir.exists() {
        let empty = dir.is_dir() && fs::read_dir(dir)?.next().is_none();
        if !empty {
            return Err(usage(format!("{} exists and is not empty", dir.display())));
        }
    }
    Ok(())
}
