use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "scpnet", version, about = "Train and evaluate SCPNet re-identification models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic striped-person dataset.
    Synth(SynthArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Rank a query set against a gallery and report CMC/mAP.
    Eval(EvalArgs),
    /// Write global features for a directory of images.
    Extract(ExtractArgs),
    /// Dump per-part activation heatmaps for one image.
    Activmap(ActivmapArgs),
    /// Train and evaluate one run per value of a config axis.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Brightness jitter, shifts, pixel noise, shared band colors.
    Desk,
    /// No nuisance: images of one identity are identical.
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Anchor {
    Top,
    Bottom,
}

impl From<Anchor> for scpnet_core::data::VisibleAnchor {
    fn from(a: Anchor) -> Self {
        match a {
            Anchor::Top => Self::Top,
            Anchor::Bottom => Self::Bottom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartialInput {
    Rescale,
    Pad,
}

impl From<PartialInput> for scpnet_core::data::PartialMode {
    fn from(p: PartialInput) -> Self {
        match p {
            PartialInput::Rescale => Self::Rescale,
            PartialInput::Pad => Self::ZeroPad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Full,
    Prefix,
}

impl From<Mode> for scpnet_core::DistanceMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => Self::Full,
            Mode::Prefix => Self::PrefixByVisibility,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExclusionArg {
    None,
    SameIdSameCam,
}

impl From<ExclusionArg> for scpnet_core::Exclusion {
    fn from(e: ExclusionArg) -> Self {
        match e {
            ExclusionArg::None => Self::None,
            ExclusionArg::SameIdSameCam => Self::SameIdSameCam,
        }
    }
}

/// Occlusion applied to query images before feature extraction.
#[derive(Debug, Clone, Args)]
pub struct OcclusionArgs {
    /// Keep this fraction of the image height, in (0, 1].
    #[arg(long)]
    pub occlude: Option<f32>,
    #[arg(long, value_enum, default_value = "top")]
    pub anchor: Anchor,
    /// How the kept rows are brought back to full size.
    #[arg(long, value_enum, default_value = "rescale")]
    pub partial: PartialInput,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Target directory; must be missing or empty.
    #[arg(long)]
    pub out: PathBuf,
    /// Training identities.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub ids: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub per_id: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Extra identities written as `query/` and `gallery/` splits.
    #[arg(long, default_value_t = 0)]
    pub test_ids: u32,
    /// Images per test identity that go to `query/`.
    #[arg(long, default_value_t = 2)]
    pub queries_per_id: usize,
    #[command(flatten)]
    pub occlusion: OcclusionArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML). Not needed with `--resume`.
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    /// Run directory name under the runs root.
    #[arg(long)]
    pub name: Option<String>,
    /// Continue a run from a checkpoint file or a run directory.
    #[arg(long, conflicts_with_all = ["config", "name"])]
    pub resume: Option<PathBuf>,
    /// Stop after this global step.
    #[arg(long)]
    pub until_step: Option<u64>,
    /// Skip the evaluation that follows a completed run.
    #[arg(long)]
    pub no_eval: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query image directory or feature file.
    #[arg(long)]
    pub query: PathBuf,
    /// Gallery image directory or feature file.
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "none")]
    pub exclusion: ExclusionArg,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[command(flatten)]
    pub occlusion: OcclusionArgs,
    /// Write summary.csv, cmc.csv and queries.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// Feature file to write; a `.csv` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[command(flatten)]
    pub occlusion: OcclusionArgs,
}

#[derive(Debug, Args)]
pub struct ActivmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Nearest-neighbour upscaling factor for the written PNGs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=64))]
    pub scale: u32,
    #[command(flatten)]
    pub occlusion: OcclusionArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    /// Weight of the parallelism loss.
    Lambda,
    /// Number of stripes.
    R,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated values, e.g. `0,1,10`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long)]
    pub name: Option<String>,
    /// Run the values concurrently, one thread each.
    #[arg(long)]
    pub parallel: bool,
}
