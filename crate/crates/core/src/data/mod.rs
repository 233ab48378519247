//! Labeled person images: directory ingestion, preprocessing, identity
//! balanced batch sampling, synthetic generation and occlusion.

mod loader;
mod occlusion;
mod preprocess;
mod sampler;
mod synthetic;

use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use loader::{load_directory, parse_market_name, write_directory, NamingScheme, VISIBILITY_FILE};
pub use occlusion::{occlude, occlude_with, PartialMode};
pub use preprocess::{
    flip_horizontal, preprocess_eval, preprocess_train, stack_batch, ImagePipeline,
};
pub use sampler::{sample_pk, IdentityIndex, PkBatchSpec};
pub use synthetic::{generate_synthetic, SyntheticSpec, BANDS};

use crate::error::{Error, Result};

/// Which end of the body remains visible in a partial image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibleAnchor {
    #[default]
    Top,
    Bottom,
}

impl VisibleAnchor {
    pub fn as_str(self) -> &'static str {
        match self {
            VisibleAnchor::Top => "top",
            VisibleAnchor::Bottom => "bottom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "top" => Some(VisibleAnchor::Top),
            "bottom" => Some(VisibleAnchor::Bottom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: RgbImage,
    pub identity: u32,
    pub camera: u32,
    /// Fraction of the body height visible, in `(0, 1]`.
    pub visible_fraction: f32,
    pub visible_anchor: VisibleAnchor,
    /// File name when loaded from or written to disk.
    pub name: Option<String>,
}

impl LabeledSample {
    pub fn new(image: RgbImage, identity: u32, camera: u32) -> Self {
        Self {
            image,
            identity,
            camera,
            visible_fraction: 1.0,
            visible_anchor: VisibleAnchor::Top,
            name: None,
        }
    }
}

/// Per-channel standardization constants applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    /// The ImageNet statistics used by pretrained ResNet pipelines.
    pub fn imagenet() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    /// Statistics measured over every pixel of `samples`.
    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0u64;
        for s in samples {
            for px in s.image.pixels() {
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Dataset("cannot compute statistics of no pixels".into()));
        }
        let n = count as f64;
        let mut out = Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        for c in 0..3 {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            out.mean[c] = mean as f32;
            out.std[c] = (var.sqrt() as f32).max(1e-3);
        }
        Ok(out)
    }
}

/// Maps raw identity ids onto contiguous class indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    ids: Vec<u32>,
}

impl LabelSpace {
    pub fn from_samples(samples: &[LabeledSample]) -> Self {
        let mut ids: Vec<u32> = samples.iter().map(|s| s.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    /// Joint label space over several datasets. Identities are namespaced by
    /// dataset position so equal raw ids from different datasets stay apart;
    /// the returned per-dataset maps give raw id → class index.
    pub fn merge(datasets: &[&[LabeledSample]]) -> (usize, Vec<BTreeMap<u32, usize>>) {
        let mut next = 0;
        let maps = datasets
            .iter()
            .map(|ds| {
                let space = LabelSpace::from_samples(ds);
                let map: BTreeMap<u32, usize> = space
                    .ids
                    .iter()
                    .enumerate()
                    .map(|(i, &id)| (id, next + i))
                    .collect();
                next += space.len();
                map
            })
            .collect();
        (next, maps)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn class_of(&self, identity: u32) -> Option<usize> {
        self.ids.binary_search(&identity).ok()
    }

    pub fn identity_of(&self, class: usize) -> Option<u32> {
        self.ids.get(class).copied()
    }
}

/// Splits samples by identity membership in `first`.
pub fn split_by_identity(
    samples: Vec<LabeledSample>,
    first: impl Fn(u32) -> bool,
) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    samples.into_iter().partition(|s| first(s.identity))
}

/// Query/gallery split for a partial-matching protocol: the first
/// `queries_per_identity` images of each identity become probes occluded to
/// `fraction`, the rest stay holistic in the gallery.
pub fn partial_split(
    samples: &[LabeledSample],
    queries_per_identity: usize,
    fraction: f32,
    anchor: VisibleAnchor,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for s in samples {
        let n = seen.entry(s.identity).or_default();
        if *n < queries_per_identity {
            queries.push(occlude(s, fraction, anchor)?);
        } else {
            gallery.push(s.clone());
        }
        *n += 1;
    }
    Ok((queries, gallery))
}
