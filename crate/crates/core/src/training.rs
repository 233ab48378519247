//! The training loop: P×K batches, the three losses, Adam with a step
//! schedule, CSV loss logging and exactly resumable checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{model_tensor_file, CheckpointMeta, TensorFile};
use crate::data::{
    preprocess_eval, preprocess_train, sample_pk, stack_batch, IdentityIndex, ImagePipeline,
    LabelSpace, LabeledSample, Normalization, PkBatchSpec,
};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss_grad, scp_loss_batch, total_loss, trihard_loss_grad, LossBreakdown,
    LossWeights,
};
use crate::model::{flatten_local, BackboneKind, Model, OutputGrads};
use crate::optim::{Adam, AdamConfig, StepSchedule};

pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const LOSS_LOG_HEADER: &str = "step,l_class,l_metric,l_scp,total,lr";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// ImageNet statistics for `resnet50_like`, dataset statistics otherwise.
    #[default]
    Auto,
    Imagenet,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    /// `(epoch, lr)` pairs, strictly increasing in epoch.
    pub lr_milestones: Vec<(usize, f64)>,
    pub weight_decay: f64,
    #[serde(default)]
    pub decoupled_weight_decay: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub loss: LossWeights,
    pub pk: PkBatchSpec,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Random crop and flip; off feeds the deterministic eval pipeline.
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Batches per epoch; defaults to `max(1, images / (P·K))`.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// The full-scale recipe: 300 epochs, Adam at 1e-3 lowered to 1e-4 at
    /// epoch 80 and 1e-5 at epoch 180, weight decay 1e-5, 16×4 batches, λ=10.
    pub fn paper() -> Self {
        Self {
            epochs: 300,
            lr_initial: 1e-3,
            lr_milestones: vec![(80, 1e-4), (180, 1e-5)],
            weight_decay: 1e-5,
            decoupled_weight_decay: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            loss: LossWeights::default(),
            pk: PkBatchSpec { p: 16, k: 4 },
            seed: 0,
            checkpoint_every: 20,
            augment: true,
            steps_per_epoch: None,
            normalization: NormalizationMode::Auto,
        }
    }

    /// The same recipe with epochs scaled by 0.1 and 8×4 batches.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            lr_milestones: vec![(8, 1e-4), (18, 1e-5)],
            pk: PkBatchSpec { p: 8, k: 4 },
            checkpoint_every: 10,
            ..Self::paper()
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr_initial,
            milestones: self.lr_milestones.clone(),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.loss.validate()?;
        self.pk.validate()?;
        if self.lr_initial <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr_initial={} must be positive", self.lr_initial)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidConfig("adam_epsilon must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::InvalidConfig("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch_for(&self, images: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| (images / self.pk.batch_size()).max(1))
    }
}

/// Learning rate in effect during `epoch`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.schedule().lr_at(epoch)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningLoss {
    pub sum: LossBreakdown,
    pub count: u64,
}

impl RunningLoss {
    pub fn add(&mut self, b: &LossBreakdown) {
        self.sum.l_class += b.l_class;
        self.sum.l_metric += b.l_metric;
        self.sum.l_scp += b.l_scp;
        self.sum.total += b.total;
        self.count += 1;
    }

    pub fn mean(&self) -> LossBreakdown {
        let n = self.count.max(1) as f64;
        LossBreakdown {
            l_class: self.sum.l_class / n,
            l_metric: self.sum.l_metric / n,
            l_scp: self.sum.l_scp / n,
            total: self.sum.total / n,
        }
    }
}

/// Everything besides model weights needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: u64,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub running: RunningLoss,
    pub normalization: Normalization,
    pub labels: LabelSpace,
}

#[derive(Serialize, Deserialize)]
struct TrainMeta {
    step: u64,
    epoch: usize,
    adam_step: u64,
    adam: AdamConfig,
    rng: ChaCha8Rng,
    running: RunningLoss,
    labels: LabelSpace,
    config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss.l_class, self.loss.l_metric, self.loss.l_scp, self.loss.total, self.lr
        )
    }
}

/// Parses a loss log written by [`Trainer`]; comment lines are skipped.
pub fn read_loss_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == LOSS_LOG_HEADER || line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: malformed loss row", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: 0,
            loss: LossBreakdown {
                l_class: num(f[1])?,
                l_metric: num(f[2])?,
                l_scp: num(f[3])?,
                total: num(f[4])?,
            },
            lr: num(f[5])?,
        });
    }
    Ok(rows)
}

pub struct Trainer<'a> {
    model: &'a mut Model,
    samples: &'a [LabeledSample],
    classes: Vec<usize>,
    index: IdentityIndex,
    pipeline: ImagePipeline,
    config: TrainConfig,
    steps_per_epoch: usize,
    state: TrainState,
    run_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// Fresh run; all randomness flows from `config.seed`.
    pub fn new(model: &'a mut Model, samples: &'a [LabeledSample], config: &TrainConfig) -> Result<Self> {
        let labels = LabelSpace::from_samples(samples);
        let normalization = match (config.normalization, model.config().backbone) {
            (NormalizationMode::Imagenet, _) | (NormalizationMode::Auto, BackboneKind::Resnet50Like) => {
                Normalization::imagenet()
            }
            _ => Normalization::from_samples(samples)?,
        };
        let state = TrainState {
            step: 0,
            optimizer: Adam::new(config.adam()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            running: RunningLoss::default(),
            normalization,
            labels,
        };
        Self::resume(model, samples, config, state)
    }

    /// Continues from a saved state.
    pub fn resume(
        model: &'a mut Model,
        samples: &'a [LabeledSample],
        config: &TrainConfig,
        state: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        let index = IdentityIndex::new(samples);
        if index.len() < 2 {
            return Err(Error::SingleIdentity);
        }
        if index.len() < config.pk.p {
            return Err(Error::Dataset(format!(
                "P={} identities per batch but the training set has {}",
                config.pk.p,
                index.len()
            )));
        }
        let classes = samples
            .iter()
            .map(|s| {
                state.labels.class_of(s.identity).ok_or_else(|| {
                    Error::Dataset(format!("identity {} missing from the label space", s.identity))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if state.labels.len() != model.config().num_identities {
            return Err(Error::InvalidConfig(format!(
                "model classifies {} identities but the training set has {}",
                model.config().num_identities,
                state.labels.len()
            )));
        }
        let pipeline = ImagePipeline::for_model(model.config(), state.normalization);
        Ok(Self {
            steps_per_epoch: config.steps_per_epoch_for(samples.len()),
            model,
            samples,
            classes,
            index,
            pipeline,
            config: config.clone(),
            state,
            run_dir: None,
        })
    }

    /// Directory for `loss.csv` and checkpoints.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn pipeline(&self) -> &ImagePipeline {
        &self.pipeline
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        (self.config.epochs * self.steps_per_epoch) as u64
    }

    pub fn current_epoch(&self) -> usize {
        (self.state.step / self.steps_per_epoch as u64) as usize
    }

    /// Runs one optimizer step and returns its log row.
    pub fn step(&mut self) -> Result<LogRow> {
        let epoch = self.current_epoch();
        let lr = lr_at(epoch, &self.config);
        let rng = &mut self.state.rng;
        let batch = sample_pk(&self.index, &self.config.pk, rng)?;
        let mut grids = Vec::with_capacity(batch.len());
        for &i in &batch {
            let img = &self.samples[i].image;
            grids.push(if self.config.augment {
                preprocess_train(img, &self.pipeline, rng)?
            } else {
                preprocess_eval(img, &self.pipeline)?
            });
        }
        let images = stack_batch(&grids)?;
        let labels: Vec<usize> = batch.iter().map(|&i| self.classes[i]).collect();
        let out = self.model.forward_train(&images, rng)?;
        let (breakdown, grads) = match batch_losses(&out, &labels, &self.config.loss) {
            Ok(v) => v,
            Err(e) => {
                self.model.clear_cache();
                return Err(e);
            }
        };
        if !breakdown.is_finite() {
            self.model.clear_cache();
            let ids: Vec<u32> = batch.iter().map(|&i| self.samples[i].identity).collect();
            return Err(Error::NonFiniteLoss {
                step: self.state.step + 1,
                snapshot: format!(
                    "l_class={} l_metric={} l_scp={} total={} batch identities={ids:?}",
                    breakdown.l_class, breakdown.l_metric, breakdown.l_scp, breakdown.total
                ),
            });
        }
        self.model.zero_grad();
        self.model.backward(&grads)?;
        self.state.optimizer.update(&mut self.model.params_mut(), lr);
        self.state.step += 1;
        self.state.running.add(&breakdown);
        Ok(LogRow {
            step: self.state.step,
            epoch,
            loss: breakdown,
            lr,
        })
    }

    /// Trains until `until_step` (or the configured end), logging every row
    /// and checkpointing at the configured epoch interval and at the end.
    pub fn run(&mut self, until_step: Option<u64>) -> Result<Vec<LogRow>> {
        let end = until_step.unwrap_or(u64::MAX).min(self.total_steps());
        let mut log_file = match &self.run_dir {
            Some(dir) => Some(self.open_log(dir)?),
            None => None,
        };
        let mut rows = Vec::new();
        while self.state.step < end {
            let row = self.step()?;
            if let Some((f, path)) = &mut log_file {
                writeln!(f, "{}", row.csv_line()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            rows.push(row);
            let finished_epoch = self.state.step.is_multiple_of(self.steps_per_epoch as u64);
            if let (Some(dir), true) = (&self.run_dir, finished_epoch) {
                let epoch = self.current_epoch();
                if self.config.checkpoint_every > 0 && epoch.is_multiple_of(self.config.checkpoint_every) {
                    self.save(&dir.join(format!("epoch_{epoch:04}.ckpt")))?;
                }
            }
        }
        if let Some((f, path)) = &mut log_file {
            f.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = &self.run_dir {
            self.save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(rows)
    }

    fn open_log(&self, dir: &Path) -> Result<(std::io::BufWriter<fs::File>, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOSS_LOG_FILE);
        let mut kept = Vec::new();
        if self.state.step > 0 && path.exists() {
            kept = read_loss_log(&path)?
                .into_iter()
                .filter(|r| r.step <= self.state.step)
                .collect();
        }
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = format!(
            "# scpnet loss log v1; lambda_scp={}\n{LOSS_LOG_HEADER}\n",
            self.config.loss.lambda_scp
        );
        w.write_all(header.as_bytes()).map_err(|e| Error::io(&path, e))?;
        for r in kept {
            writeln!(w, "{}", r.csv_line()).map_err(|e| Error::io(&path, e))?;
        }
        Ok((w, path))
    }

    /// Writes a resumable checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        train_tensor_file(self.model, &self.state, &self.config, self.current_epoch())?.write(path)
    }
}

/// Computes every loss component and the output gradients for one batch.
pub fn batch_losses(
    out: &crate::model::TrainOutputs,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    let to64_2 = |a: &Array2<f32>| a.mapv(|v| v as f64);
    let to32_2 = |a: Array2<f64>| a.mapv(|v| v as f32);
    let global = to64_2(&out.global);
    let local = out.local.mapv(|v| v as f64);
    let margin = weights.margin();

    let mut l_class = 0.0;
    let mut l_metric = 0.0;
    let mut d_global = Array2::<f64>::zeros(global.raw_dim());
    let mut d_local = Array3::<f64>::zeros(local.raw_dim());
    let mut d_logits = None;
    let mut d_local_logits = None;

    if let Some(logits) = &out.logits {
        let (v, g) = classification_loss_grad(to64_2(logits).view(), labels)?;
        l_class += v;
        d_logits = Some(to32_2(g));
        let (v, g) = trihard_loss_grad(global.view(), labels, margin)?;
        l_metric += v;
        d_global += &g;
    }
    if let Some(logits) = &out.local_logits {
        let (v, g) = classification_loss_grad(to64_2(logits).view(), labels)?;
        l_class += v;
        d_local_logits = Some(to32_2(g));
        let flat = to64_2(&flatten_local(&out.local));
        let (v, g) = trihard_loss_grad(flat.view(), labels, margin)?;
        l_metric += v;
        d_local += &g.into_shape_with_order(local.raw_dim()).unwrap();
    }
    let (l_scp, g_local, g_global) = scp_loss_batch(local.view(), global.view(), weights.scp_reduction)?;
    let lambda = weights.lambda_scp;
    if lambda != 0.0 {
        d_global.scaled_add(lambda, &g_global);
        if !weights.stop_gradient_local {
            d_local.scaled_add(lambda, &g_local);
        }
    }
    let breakdown = total_loss(l_class, l_metric, l_scp, weights);
    let grads = OutputGrads {
        local: d_local.mapv(|v| v as f32),
        global: to32_2(d_global),
        logits: d_logits,
        local_logits: d_local_logits,
    };
    Ok((breakdown, grads))
}

fn train_tensor_file(
    model: &Model,
    state: &TrainState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<TensorFile> {
    let meta = TrainMeta {
        step: state.step,
        epoch,
        adam_step: state.optimizer.step,
        adam: state.optimizer.config,
        rng: state.rng.clone(),
        running: state.running,
        labels: state.labels.clone(),
        config: config.clone(),
    };
    let ck = CheckpointMeta {
        model: model.config().clone(),
        normalization: state.normalization,
        step: state.step,
        train: Some(serde_json::to_value(meta)?),
    };
    let mut file = model_tensor_file(model, &ck)?;
    let trainable: Vec<_> = model.params().into_iter().filter(|p| p.trainable).collect();
    for (p, (m, v)) in trainable
        .iter()
        .zip(state.optimizer.first.iter().zip(&state.optimizer.second))
    {
        file.push(format!("optim.m.{}", p.name), p.shape.clone(), m.clone());
        file.push(format!("optim.v.{}", p.name), p.shape.clone(), v.clone());
    }
    Ok(file)
}

/// A model and the training state stored in a resumable checkpoint.
pub struct Resumed {
    pub model: Model,
    pub state: TrainState,
    pub config: TrainConfig,
    pub epoch: usize,
}

pub fn load_train_checkpoint(path: &Path) -> Result<Resumed> {
    let file = TensorFile::read(path)?;
    let (model, meta) = crate::checkpoint::model_from_file(&file)?;
    let train = meta
        .train
        .clone()
        .ok_or_else(|| Error::Format(format!("{} holds no training state", path.display())))?;
    let tm: TrainMeta = serde_json::from_value(train)?;
    let mut optimizer = Adam::new(tm.adam);
    optimizer.step = tm.adam_step;
    if tm.adam_step > 0 {
        for p in model.params().into_iter().filter(|p| p.trainable) {
            let get = |kind: &str| {
                file.get(&format!("optim.{kind}.{}", p.name))
                    .map(|t| t.data.clone())
                    .ok_or_else(|| Error::Format(format!("missing optimizer state for {}", p.name)))
            };
            optimizer.first.push(get("m")?);
            optimizer.second.push(get("v")?);
        }
    }
    Ok(Resumed {
        model,
        state: TrainState {
            step: tm.step,
            optimizer,
            rng: tm.rng,
            running: tm.running,
            normalization: meta.normalization,
            labels: tm.labels,
        },
        config: tm.config,
        epoch: tm.epoch,
    })
}

/// One-call training on an in-memory dataset without a run directory.
pub fn train(model: &mut Model, samples: &[LabeledSample], config: &TrainConfig) -> Result<(TrainState, Vec<LogRow>)> {
    let mut trainer = Trainer::new(model, samples, config)?;
    let rows = trainer.run(None)?;
    Ok((trainer.state.clone(), rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeConfig {
    pub max_steps: usize,
    pub lambda_scp: f64,
    pub lr: f64,
    pub seed: u64,
    pub check_every: usize,
    pub scp_threshold: f64,
    /// Train with dropout off, as memorization checks usually do.
    pub disable_dropout: bool,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            lambda_scp: 10.0,
            lr: 1e-3,
            seed: 0,
            check_every: 10,
            scp_threshold: 1e-2,
            disable_dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeReport {
    pub passed: bool,
    /// Steps taken when the gate passed, or the full budget.
    pub steps: usize,
    pub accuracy: f64,
    pub scp: f64,
}

/// Can the model memorize a tiny dataset? Trains on every image with the
/// deterministic pipeline and checks, in inference mode, for 100% training
/// accuracy and a mean per-image parallelism loss below the threshold.
/// The model's dropout rate is restored afterwards.
pub fn overfit_smoke(model: &mut Model, tiny: &[LabeledSample], cfg: &SmokeConfig) -> Result<SmokeReport> {
    let rate = model.config().dropout;
    if cfg.disable_dropout {
        model.set_dropout(0.0);
    }
    let report = run_smoke(model, tiny, cfg);
    model.set_dropout(rate);
    report
}

fn run_smoke(model: &mut Model, tiny: &[LabeledSample], cfg: &SmokeConfig) -> Result<SmokeReport> {
    let index = IdentityIndex::new(tiny);
    if index.len() > 8 || index.members.iter().any(|m| m.len() > 4) {
        return Err(Error::InvalidArgument(
            "smoke test expects at most 8 identities with at most 4 images each".into(),
        ));
    }
    let config = TrainConfig {
        epochs: cfg.max_steps,
        lr_initial: cfg.lr.max(f64::MIN_POSITIVE),
        lr_milestones: vec![],
        loss: LossWeights {
            lambda_scp: cfg.lambda_scp,
            ..LossWeights::default()
        },
        pk: PkBatchSpec { p: index.len(), k: 4 },
        seed: cfg.seed,
        augment: false,
        steps_per_epoch: Some(1),
        ..TrainConfig::paper()
    };
    let mut trainer = Trainer::new(model, tiny, &config)?;
    let images = {
        let grids = tiny
            .iter()
            .map(|s| preprocess_eval(&s.image, trainer.pipeline()))
            .collect::<Result<Vec<_>>>()?;
        stack_batch(&grids)?
    };
    let labels = trainer.classes.clone();
    let mut last = (0.0, f64::INFINITY);
    for step in 1..=cfg.max_steps {
        if cfg.lr == 0.0 {
            // Frozen weights: sample and evaluate but never update.
            trainer.state.rng = ChaCha8Rng::seed_from_u64(cfg.seed + step as u64);
        } else {
            trainer.step()?;
        }
        if step % cfg.check_every == 0 || step == cfg.max_steps {
            last = smoke_metrics(trainer.model, &images, &labels)?;
            if last.0 == 1.0 && last.1 < cfg.scp_threshold {
                return Ok(SmokeReport {
                    passed: true,
                    steps: step,
                    accuracy: last.0,
                    scp: last.1,
                });
            }
        }
    }
    Ok(SmokeReport {
        passed: false,
        steps: cfg.max_steps,
        accuracy: last.0,
        scp: last.1,
    })
}

fn smoke_metrics(model: &Model, images: &Array4<f32>, labels: &[usize]) -> Result<(f64, f64)> {
    let inf = model.infer(images)?;
    let logits = model
        .classify(&inf.global)
        .or_else(|| model.classify_local(&inf.local))
        .ok_or_else(|| Error::InvalidArgument("model has no classifier".into()))?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == l
        })
        .count();
    let (scp, _, _) = scp_loss_batch(
        inf.local.mapv(|v| v as f64).view(),
        inf.global.mapv(|v| v as f64).view(),
        crate::losses::ScpReduction::Mean,
    )?;
    Ok((correct as f64 / labels.len() as f64, scp))
}
