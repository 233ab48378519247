//! Backbone plus the local (stripe) and global (channel-expanded) branches.

mod backbone;
pub mod branches;
mod config;

use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use backbone::{resnet50, toy_cnn, Bottleneck};
pub use branches::{
    concat_parts, global_average_pool, global_branch, local_branch, part_activation_maps,
    split_channels, stripe_mass_share, stripe_pool, Conv1x1, FeatureMap, GlobalFeature,
    LocalFeatureSet,
};
pub use config::{
    BackboneKind, ExpansionPost, LossAttachment, ModelConfig, ACCEPTED_STRIPES, RESNET50_CHANNELS,
};

use crate::checkpoint::TensorFile;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Dropout, Layer, Linear, Param, Relu, Sequential};

const CLASSIFIER_INIT_STD: f32 = 0.01;

/// Inference-mode outputs for a batch.
#[derive(Debug, Clone)]
pub struct Inference {
    pub feature_map: Array4<f32>,
    /// `N×RC×H×W` expanded map before pooling.
    pub expanded: Array4<f32>,
    /// `N×R×C`.
    pub local: Array3<f32>,
    /// `N×RC`.
    pub global: Array2<f32>,
}

/// Training-mode outputs for a batch.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub local: Array3<f32>,
    pub global: Array2<f32>,
    /// Logits of the global-branch classifier, when attached.
    pub logits: Option<Array2<f32>>,
    /// Logits of the local-branch classifier, when attached.
    pub local_logits: Option<Array2<f32>>,
}

/// Loss gradients with respect to each [`TrainOutputs`] field.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub local: Array3<f32>,
    pub global: Array2<f32>,
    pub logits: Option<Array2<f32>>,
    pub local_logits: Option<Array2<f32>>,
}

pub struct Model {
    config: ModelConfig,
    backbone: Sequential,
    expansion: Conv2d,
    expansion_post: Sequential,
    dropout: Dropout,
    classifier: Option<Linear>,
    local_dropout: Dropout,
    local_classifier: Option<Linear>,
    cache: Option<(usize, usize)>,
}

/// Builds a model with weights drawn from `seed`.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::new(config, &mut rng)
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = backbone::build_backbone(&config, rng);
        let c = config.channels;
        let rc = config.global_dim();
        let expansion = Conv2d::new("expansion", c, rc, 1, 1, 0, true, rng);
        let mut post = Sequential::new();
        match config.expansion_post {
            ExpansionPost::None => {}
            ExpansionPost::Relu => post.push(Relu::new()),
            ExpansionPost::Batchnorm => post.push(BatchNorm2d::new("expansion_bn", rc)),
            ExpansionPost::BatchnormRelu => {
                post.push(BatchNorm2d::new("expansion_bn", rc));
                post.push(Relu::new());
            }
        }
        let classifier = config
            .loss_attachment
            .uses_global()
            .then(|| Linear::new("classifier", rc, config.num_identities, CLASSIFIER_INIT_STD, rng));
        let local_classifier = config.loss_attachment.uses_local().then(|| {
            Linear::new("local_classifier", rc, config.num_identities, CLASSIFIER_INIT_STD, rng)
        });
        Ok(Self {
            dropout: Dropout::new(config.dropout),
            local_dropout: Dropout::new(config.dropout),
            config,
            backbone,
            expansion,
            expansion_post: post,
            classifier,
            local_classifier,
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    /// All parameters and buffers, in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.backbone.params();
        out.extend(self.expansion.params());
        out.extend(self.expansion_post.params());
        if let Some(c) = &self.classifier {
            out.extend(c.params());
        }
        if let Some(c) = &self.local_classifier {
            out.extend(c.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.backbone.params_mut();
        out.extend(self.expansion.params_mut());
        out.extend(self.expansion_post.params_mut());
        if let Some(c) = &mut self.classifier {
            out.extend(c.params_mut());
        }
        if let Some(c) = &mut self.local_classifier {
            out.extend(c.params_mut());
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// The channel-expansion layer (`C → RC`) as a standalone 1×1 map.
    pub fn expansion(&self) -> Conv1x1 {
        let rc = self.config.global_dim();
        let weight =
            Array2::from_shape_vec((rc, self.config.channels), self.expansion.weight.value.clone())
                .unwrap();
        let bias = Array1::from(self.expansion.bias.as_ref().unwrap().value.clone());
        Conv1x1 { weight, bias }
    }

    fn check_input(&self, images: &Array4<f32>) -> Result<()> {
        let (_, c, h, w) = images.dim();
        if c != 3 || h != self.config.input_height || w != self.config.input_width {
            return Err(Error::Shape(format!(
                "model expects N×3×{}×{} input, got N×{c}×{h}×{w}",
                self.config.input_height, self.config.input_width
            )));
        }
        Ok(())
    }

    /// Backbone activations only.
    pub fn feature_maps(&self, images: &Array4<f32>) -> Result<Array4<f32>> {
        self.check_input(images)?;
        Ok(self.backbone.infer(images))
    }

    /// Deterministic inference pass (dropout off, running batch-norm stats).
    pub fn infer(&self, images: &Array4<f32>) -> Result<Inference> {
        let feature_map = self.feature_maps(images)?;
        let expanded = self.expansion_post.infer(&self.expansion.infer(&feature_map));
        let local = stripe_pool(&feature_map, self.config.stripes)?;
        let global = global_average_pool(&expanded);
        Ok(Inference {
            feature_map,
            expanded,
            local,
            global,
        })
    }

    /// `N×RC` global features, the retrieval descriptor.
    pub fn global_features(&self, images: &Array4<f32>) -> Result<Array2<f32>> {
        Ok(self.infer(images)?.global)
    }

    /// Inference-mode logits of the global classifier.
    pub fn classify(&self, global: &Array2<f32>) -> Option<Array2<f32>> {
        self.classifier.as_ref().map(|c| c.infer(global))
    }

    /// Inference-mode logits of the local classifier on flattened local features.
    pub fn classify_local(&self, local: &Array3<f32>) -> Option<Array2<f32>> {
        self.local_classifier
            .as_ref()
            .map(|c| c.infer(&flatten_local(local)))
    }

    /// Training-mode pass; dropout masks come from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        images: &Array4<f32>,
        rng: &mut R,
    ) -> Result<TrainOutputs> {
        self.check_input(images)?;
        let fm = self.backbone.forward(images);
        let (_, _, h, w) = fm.dim();
        let local = stripe_pool(&fm, self.config.stripes)?;
        let expanded = self.expansion_post.forward(&self.expansion.forward(&fm));
        let global = global_average_pool(&expanded);
        let logits = match &mut self.classifier {
            Some(c) => Some(c.forward(&self.dropout.forward(&global, rng))),
            None => None,
        };
        let local_logits = match &mut self.local_classifier {
            Some(c) => Some(c.forward(&self.local_dropout.forward(&flatten_local(&local), rng))),
            None => None,
        };
        self.cache = Some((h, w));
        Ok(TrainOutputs {
            local,
            global,
            logits,
            local_logits,
        })
    }

    /// Accumulates parameter gradients for the last `forward_train`.
    pub fn backward(&mut self, grads: &OutputGrads) -> Result<()> {
        let (h, w) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward without forward_train".into()))?;
        let mut d_global = grads.global.clone();
        if let (Some(c), Some(g)) = (&mut self.classifier, &grads.logits) {
            d_global += &self.dropout.backward(&c.backward(g));
        }
        let mut d_local = grads.local.clone();
        if let (Some(c), Some(g)) = (&mut self.local_classifier, &grads.local_logits) {
            let flat = self.local_dropout.backward(&c.backward(g));
            d_local += &unflatten_local(&flat, self.config.stripes);
        }
        let d_expanded = branches::global_average_pool_backward(&d_global, h, w);
        let d_expanded = self.expansion_post.backward(&d_expanded);
        let mut d_fm = self.expansion.backward(&d_expanded);
        d_fm += &branches::stripe_pool_backward(&d_local.view(), h, w);
        self.backbone.backward(&d_fm);
        Ok(())
    }

    /// Changes the training-time dropout rate of both classifier heads.
    pub fn set_dropout(&mut self, rate: f32) {
        self.config.dropout = rate;
        self.dropout.rate = rate;
        self.local_dropout.rate = rate;
    }

    /// Drops cached activations from an unfinished training step.
    pub fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.expansion.clear_cache();
        self.expansion_post.clear_cache();
        for c in [&mut self.classifier, &mut self.local_classifier].into_iter().flatten() {
            c.clear_cache();
        }
        self.dropout.clear_cache();
        self.local_dropout.clear_cache();
        self.cache = None;
    }

    /// Copies every tensor of `file` whose name matches a model parameter.
    /// Shapes must agree. Returns the number of tensors loaded.
    pub fn load_tensors(&mut self, file: &TensorFile, prefix: Option<&str>) -> Result<usize> {
        let mut loaded = 0;
        for p in self.params_mut() {
            if prefix.is_some_and(|pre| !p.name.starts_with(pre)) {
                continue;
            }
            if let Some(t) = file.get(&p.name) {
                if t.shape != p.shape {
                    return Err(Error::Format(format!(
                        "tensor {} has shape {:?}, model expects {:?}",
                        p.name, t.shape, p.shape
                    )));
                }
                p.value.clone_from(&t.data);
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    /// Loads externally supplied backbone weights (tensors named `backbone.*`).
    pub fn load_pretrained_backbone(&mut self, path: &Path) -> Result<usize> {
        let file = TensorFile::read(path)?;
        let n = self.load_tensors(&file, Some("backbone."))?;
        if n == 0 {
            return Err(Error::Format(format!(
                "{} holds no backbone tensors matching this model",
                path.display()
            )));
        }
        Ok(n)
    }
}

/// `N×R×C` to `N×RC`, part-major.
pub fn flatten_local(local: &Array3<f32>) -> Array2<f32> {
    let (n, r, c) = local.dim();
    local
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, r * c))
        .unwrap()
}

fn unflatten_local(flat: &Array2<f32>, stripes: usize) -> Array3<f32> {
    let (n, d) = flat.dim();
    flat.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, stripes, d / stripes))
        .unwrap()
}

/// Splits a batch of maps into per-image [`FeatureMap`]s.
pub fn feature_maps_of(batch: &Array4<f32>) -> Vec<FeatureMap> {
    batch
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, m)| FeatureMap {
            values: m.to_owned(),
            batch_index: i,
        })
        .collect()
}
