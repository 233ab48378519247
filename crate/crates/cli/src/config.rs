//! Run configuration files (TOML).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use scpnet_core::data::{PartialMode, VisibleAnchor};
use scpnet_core::evaluation::{DistanceMode, Exclusion};
use scpnet_core::{ModelConfig, TrainConfig};

/// Environment variable overriding the root directory for run outputs.
pub const RUNS_DIR_ENV: &str = "SCPNET_RUNS_DIR";
/// File name of the resolved config inside a run directory.
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const MANIFEST: &str = "manifest.json";

/// Bad configuration or command-line input; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory name under the runs root; defaults to the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Image directories in `<id>_c<camera>_<seq>.png` layout. Relative paths
/// are resolved against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gallery: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub mode: DistanceMode,
    #[serde(default)]
    pub exclusion: Exclusion,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Occlude every query to this visible fraction before extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlude: Option<f32>,
    #[serde(default)]
    pub anchor: VisibleAnchor,
    #[serde(default)]
    pub partial_mode: PartialMode,
}

fn default_batch() -> usize {
    64
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: DistanceMode::default(),
            exclusion: Exclusion::default(),
            batch_size: default_batch(),
            occlude: None,
            anchor: VisibleAnchor::default(),
            partial_mode: PartialMode::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.message().to_string())?;
        cfg.train.validate().map_err(|e| e.to_string())?;
        if cfg.eval.batch_size == 0 {
            return Err("eval.batch_size must be positive".into());
        }
        if let Some(f) = cfg.eval.occlude {
            if !(f > 0.0 && f <= 1.0) {
                return Err(format!("eval.occlude={f} outside (0, 1]"));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Run name: explicit override, then the `name` key, then the file stem.
    pub fn run_name(&self, override_name: Option<&str>, path: &Path) -> String {
        override_name
            .map(str::to_string)
            .or_else(|| self.name.clone())
            .unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into())
            })
    }

    /// Query and gallery directories, when both are configured.
    pub fn eval_dirs(&self) -> Option<(&Path, &Path)> {
        Some((self.data.query.as_deref()?, self.data.gallery.as_deref()?))
    }
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
train = "data/train"

[model]
backbone = "toy_cnn"
channels = 32
stripes = 4
input_height = 64
input_width = 32
dropout = 0.75

[train]
epochs = 30
lr_initial = 1e-3
lr_milestones = [[8, 1e-4], [18, 1e-5]]
weight_decay = 1e-5
adam_beta1 = 0.9
adam_beta2 = 0.999
adam_epsilon = 1e-8
seed = 0

[train.loss]
lambda_scp = 10.0
triplet_margin = 0.3

[train.pk]
p = 8
k = 4
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.model.num_identities, 0);
        assert_eq!(cfg.train.lr_milestones, vec![(8, 1e-4), (18, 1e-5)]);
        assert_eq!(cfg.eval, EvalSection::default());
        assert!(cfg.eval_dirs().is_none());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.model.num_identities = 32;
        cfg.data.query = Some("q".into());
        cfg.eval.occlude = Some(0.5);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seed = 0", "seed = 0\nsede = 1");
        assert!(RunConfig::parse(&text).unwrap_err().contains("sede"));
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let text = MINIMAL.replace("lr_milestones = [[8, 1e-4], [18, 1e-5]]", "lr_milestones = [[18, 1e-4], [8, 1e-5]]");
        assert!(RunConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[eval]\nocclude = 1.5\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn shipped_presets_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["paper.cfg", "desk.cfg"] {
            let cfg = RunConfig::load(&dir.join(name)).unwrap();
            assert_eq!(cfg.train.loss.lambda_scp, 10.0, "{name}");
        }
    }

    #[test]
    fn run_name_precedence() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        let path = Path::new("configs/desk.cfg");
        assert_eq!(cfg.run_name(None, path), "desk");
        cfg.name = Some("named".into());
        assert_eq!(cfg.run_name(None, path), "named");
        assert_eq!(cfg.run_name(Some("flag"), path), "flag");
    }
}
