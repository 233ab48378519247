//! Occluded-probe comparison between training configurations on synthetic data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, partial_split, split_by_identity, ImagePipeline, SyntheticSpec, VisibleAnchor,
};
use crate::evaluation::{
    distance_matrix, evaluate, extract_features, part_locality, DistanceMode, Exclusion, RankingReport,
};
use crate::losses::LossBreakdown;
use crate::model::{build_model, Model, ModelConfig};
use crate::training::{train, TrainConfig};
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendSetup {
    pub train_identities: usize,
    pub test_identities: usize,
    pub images_per_identity: usize,
    /// Occluded probes drawn from each test identity; the rest form the gallery.
    pub queries_per_identity: usize,
    pub visible_fraction: f32,
    pub anchor: VisibleAnchor,
    pub mode: DistanceMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrendSetup {
    pub fn desk() -> Self {
        Self {
            train_identities: 32,
            test_identities: 16,
            images_per_identity: 16,
            queries_per_identity: 2,
            visible_fraction: 0.5,
            anchor: VisibleAnchor::Top,
            mode: DistanceMode::Full,
            model: ModelConfig::toy(32),
            train: TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrendRun {
    pub lambda_scp: f64,
    pub seed: u64,
    pub final_loss: LossBreakdown,
    pub holistic: RankingReport,
    pub occluded: RankingReport,
    /// Mean share of part-r activation mass inside stripe r, per part.
    pub locality: Vec<f64>,
}

impl TrendRun {
    pub fn occluded_rank1(&self) -> f64 {
        self.occluded.rank(1)
    }
}

/// Trains one model at `lambda_scp` and evaluates holistic and occluded probes.
///
/// `seed` drives the data, the weight init and the training RNG, so runs that
/// differ only in `lambda_scp` see the same images.
pub fn run_trend(setup: &TrendSetup, lambda_scp: f64, seed: u64) -> Result<(Model, TrendRun)> {
    let ids = setup.train_identities + setup.test_identities;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = generate_synthetic(&SyntheticSpec::desk(ids, setup.images_per_identity), &mut rng);
    let cut = setup.train_identities as u32;
    let (train_set, test_set) = split_by_identity(all, |id| id <= cut);

    let mut model_cfg = setup.model.clone();
    model_cfg.num_identities = setup.train_identities;
    let mut model = build_model(model_cfg, seed)?;
    let mut cfg = setup.train.clone();
    cfg.seed = seed;
    cfg.loss.lambda_scp = lambda_scp;
    let (state, rows) = train(&mut model, &train_set, &cfg)?;
    let final_loss = rows.last().map(|r| r.loss).unwrap_or_default();

    let pipeline = ImagePipeline::for_model(model.config(), state.normalization);
    let (holistic_q, gallery) = partial_split(&test_set, setup.queries_per_identity, 1.0, setup.anchor)?;
    let (occluded_q, _) = partial_split(
        &test_set,
        setup.queries_per_identity,
        setup.visible_fraction,
        setup.anchor,
    )?;
    let gallery_f = extract_features(&model, &gallery, &pipeline, 64)?;
    let report = |queries| -> Result<RankingReport> {
        let q = extract_features(&model, queries, &pipeline, 64)?;
        let d = distance_matrix(&q, &gallery_f, setup.mode)?;
        evaluate(d.view(), &q.labels, &gallery_f.labels, &q.cameras, &gallery_f.cameras, Exclusion::None)
    };
    let holistic = report(&holistic_q)?;
    let occluded = report(&occluded_q)?;
    let locality = part_locality(&model, &test_set, &pipeline)?;
    Ok((
        model,
        TrendRun {
            lambda_scp,
            seed,
            final_loss,
            holistic,
            occluded,
            locality,
        },
    ))
}
