use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Four conv blocks with an overall /8 spatial reduction.
    ToyCnn,
    /// ResNet-50 layout (/32 reduction, 2048 output channels).
    Resnet50Like,
}

impl BackboneKind {
    pub fn downsampling(self) -> usize {
        match self {
            BackboneKind::ToyCnn => 8,
            BackboneKind::Resnet50Like => 32,
        }
    }
}

/// What follows the 1×1 channel expansion before pooling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionPost {
    #[default]
    None,
    Relu,
    Batchnorm,
    BatchnormRelu,
}

/// Which branch the identity and triplet losses are applied to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAttachment {
    #[default]
    Global,
    Local,
    Both,
}

impl LossAttachment {
    pub fn uses_global(self) -> bool {
        matches!(self, LossAttachment::Global | LossAttachment::Both)
    }

    pub fn uses_local(self) -> bool {
        matches!(self, LossAttachment::Local | LossAttachment::Both)
    }
}

pub const ACCEPTED_STRIPES: [usize; 4] = [1, 2, 4, 8];
pub const RESNET50_CHANNELS: usize = 2048;

fn default_toy_widths() -> [usize; 3] {
    [16, 32, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Backbone output channels `C`.
    pub channels: usize,
    /// Number of horizontal stripes `R`.
    pub stripes: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub dropout: f32,
    /// Classifier width. Run configs may leave it out; the CLI fills it in
    /// from the training data.
    #[serde(default)]
    pub num_identities: usize,
    #[serde(default)]
    pub expansion_post: ExpansionPost,
    #[serde(default)]
    pub loss_attachment: LossAttachment,
    /// Widths of the first three toy conv blocks (the fourth emits `C`).
    #[serde(default = "default_toy_widths")]
    pub toy_widths: [usize; 3],
}

impl ModelConfig {
    /// Desk-scale defaults: 64×32 input, C=32, R=4.
    pub fn toy(num_identities: usize) -> Self {
        Self {
            backbone: BackboneKind::ToyCnn,
            channels: 32,
            stripes: 4,
            input_height: 64,
            input_width: 32,
            dropout: 0.75,
            num_identities,
            expansion_post: ExpansionPost::None,
            loss_attachment: LossAttachment::Global,
            toy_widths: default_toy_widths(),
        }
    }

    /// 256×128 input on a ResNet-50 layout with R=4.
    pub fn resnet50(num_identities: usize) -> Self {
        Self {
            backbone: BackboneKind::Resnet50Like,
            channels: RESNET50_CHANNELS,
            input_height: 256,
            input_width: 128,
            ..Self::toy(num_identities)
        }
    }

    pub fn feature_height(&self) -> usize {
        self.input_height / self.backbone.downsampling()
    }

    pub fn feature_width(&self) -> usize {
        self.input_width / self.backbone.downsampling()
    }

    /// Length of the global feature, `R·C`.
    pub fn global_dim(&self) -> usize {
        self.stripes * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.channels == 0 {
            problems.push("channels must be positive".to_string());
        }
        if self.backbone == BackboneKind::Resnet50Like && self.channels != RESNET50_CHANNELS {
            problems.push(format!(
                "channels={} but resnet50_like emits {RESNET50_CHANNELS}",
                self.channels
            ));
        }
        if !ACCEPTED_STRIPES.contains(&self.stripes) {
            problems.push(format!("stripes={} not in {ACCEPTED_STRIPES:?}", self.stripes));
        }
        let down = self.backbone.downsampling();
        if self.input_height == 0 || !self.input_height.is_multiple_of(down) {
            problems.push(format!(
                "input_height={} is not a positive multiple of {down}",
                self.input_height
            ));
        }
        if self.input_width == 0 || !self.input_width.is_multiple_of(down) {
            problems.push(format!(
                "input_width={} is not a positive multiple of {down}",
                self.input_width
            ));
        }
        let h = self.feature_height();
        if self.stripes > 0 && h > 0 && !h.is_multiple_of(self.stripes) {
            problems.push(format!(
                "feature height H={h} (from input_height={}) is not divisible by stripes={}",
                self.input_height, self.stripes
            ));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            problems.push(format!("dropout={} outside [0, 1]", self.dropout));
        }
        if self.num_identities == 0 {
            problems.push("num_identities must be positive".to_string());
        }
        if self.toy_widths.contains(&0) {
            problems.push("toy_widths must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}
