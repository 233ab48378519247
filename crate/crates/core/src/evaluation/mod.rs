//! Feature extraction, holistic and partial distances, and CMC/mAP.

mod io;
mod ranking;

use std::ops::Range;

use ndarray::{s, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{preprocess_eval, stack_batch, ImagePipeline, LabeledSample, VisibleAnchor};
use crate::error::{Error, Result};
use crate::model::{part_activation_maps, stripe_mass_share, Model};

pub use io::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use ranking::{
    compute_cmc, compute_map, evaluate, CmcResult, Exclusion, MapResult, QueryRanking,
    RankingReport,
};

/// Global features of a set of images plus the labels retrieval needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGallery {
    /// `N×RC`, one row per image.
    pub features: Array2<f32>,
    pub labels: Vec<u32>,
    pub cameras: Vec<u32>,
    pub visible_fraction: Vec<f32>,
    pub visible_anchor: Vec<VisibleAnchor>,
    pub stripes: usize,
}

impl FeatureGallery {
    pub fn new(
        features: Array2<f32>,
        labels: Vec<u32>,
        cameras: Vec<u32>,
        visible_fraction: Vec<f32>,
        visible_anchor: Vec<VisibleAnchor>,
        stripes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if [labels.len(), cameras.len(), visible_fraction.len(), visible_anchor.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Shape(format!(
                "{n} feature rows but {} labels, {} cameras, {} visibilities, {} anchors",
                labels.len(),
                cameras.len(),
                visible_fraction.len(),
                visible_anchor.len()
            )));
        }
        if stripes == 0 || !features.ncols().is_multiple_of(stripes) {
            return Err(Error::Shape(format!(
                "feature width {} is not divisible into {stripes} parts",
                features.ncols()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("gallery has non-finite features".into()));
        }
        Ok(Self {
            features,
            labels,
            cameras,
            visible_fraction,
            visible_anchor,
            stripes,
        })
    }

    /// Holistic labels for a plain feature matrix.
    pub fn holistic(features: Array2<f32>, labels: Vec<u32>, cameras: Vec<u32>, stripes: usize) -> Result<Self> {
        let n = features.nrows();
        Self::new(features, labels, cameras, vec![1.0; n], vec![VisibleAnchor::Top; n], stripes)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    /// Visible parts of row `i`: `round(vf·R)` clamped to `[1, R]`, counted
    /// from the top or the bottom depending on the anchor.
    pub fn visible_parts(&self, i: usize) -> Range<usize> {
        let r = self.stripes;
        let s = shared_parts(self.visible_fraction[i], r);
        match self.visible_anchor[i] {
            VisibleAnchor::Top => 0..s,
            VisibleAnchor::Bottom => r - s..r,
        }
    }
}

/// `round(visible_fraction·R)` clamped to `[1, R]`.
pub fn shared_parts(visible_fraction: f32, stripes: usize) -> usize {
    ((visible_fraction as f64 * stripes as f64).round() as usize).clamp(1, stripes)
}

/// Global features for `samples` in inference mode, `batch_size` at a time.
pub fn extract_features(
    model: &Model,
    samples: &[LabeledSample],
    pipeline: &ImagePipeline,
    batch_size: usize,
) -> Result<FeatureGallery> {
    let cfg = model.config();
    if pipeline.height != cfg.input_height || pipeline.width != cfg.input_width {
        return Err(Error::Shape(format!(
            "pipeline produces {}×{} images but the model expects {}×{}",
            pipeline.height, pipeline.width, cfg.input_height, cfg.input_width
        )));
    }
    let mut features = Array2::<f32>::zeros((samples.len(), cfg.global_dim()));
    for (chunk_idx, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let grids = chunk
            .iter()
            .map(|s| preprocess_eval(&s.image, pipeline))
            .collect::<Result<Vec<_>>>()?;
        let global = model.global_features(&stack_batch(&grids)?)?;
        let start = chunk_idx * batch_size.max(1);
        features
            .slice_mut(s![start..start + chunk.len(), ..])
            .assign(&global);
    }
    FeatureGallery::new(
        features,
        samples.iter().map(|s| s.identity).collect(),
        samples.iter().map(|s| s.camera).collect(),
        samples.iter().map(|s| s.visible_fraction).collect(),
        samples.iter().map(|s| s.visible_anchor).collect(),
        cfg.stripes,
    )
}

/// L2 distance over the first `shared_parts` channel blocks of two global
/// features split into `stripes` parts.
pub fn pair_distance(q: ArrayView1<f32>, g: ArrayView1<f32>, shared_parts: usize, stripes: usize) -> Result<f64> {
    if shared_parts == 0 || shared_parts > stripes {
        return Err(Error::InvalidArgument(format!(
            "shared_parts={shared_parts} must lie in [1, {stripes}]"
        )));
    }
    part_distance(q, g, 0..shared_parts, stripes)
}

/// L2 distance restricted to the channel blocks of `parts`.
pub fn part_distance(q: ArrayView1<f32>, g: ArrayView1<f32>, parts: Range<usize>, stripes: usize) -> Result<f64> {
    if q.len() != g.len() {
        return Err(Error::Shape(format!("feature lengths {} and {} differ", q.len(), g.len())));
    }
    if stripes == 0 || !q.len().is_multiple_of(stripes) {
        return Err(Error::Shape(format!("length {} is not divisible into {stripes} parts", q.len())));
    }
    if parts.is_empty() || parts.end > stripes {
        return Err(Error::InvalidArgument(format!("parts {parts:?} out of range for {stripes}")));
    }
    let c = q.len() / stripes;
    let range = parts.start * c..parts.end * c;
    let sq: f64 = q
        .slice(s![range.clone()])
        .iter()
        .zip(g.slice(s![range]).iter())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Plain L2 over whole global features.
    #[default]
    Full,
    /// L2 over the parts both images show, from their visible fractions.
    #[serde(alias = "prefix")]
    PrefixByVisibility,
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "prefix" | "prefix_by_visibility" => Ok(Self::PrefixByVisibility),
            _ => Err(Error::InvalidArgument(format!("unknown distance mode {s:?}"))),
        }
    }
}

/// Parts shared by query row `qi` and gallery row `gi`. When the visible
/// ranges do not overlap, the query's own range is used.
fn shared_range(queries: &FeatureGallery, qi: usize, gallery: &FeatureGallery, gi: usize) -> Range<usize> {
    let a = queries.visible_parts(qi);
    let b = gallery.visible_parts(gi);
    let r = a.start.max(b.start)..a.end.min(b.end);
    if r.is_empty() {
        a
    } else {
        r
    }
}

/// `Q×N` distances between every query and gallery row.
pub fn distance_matrix(queries: &FeatureGallery, gallery: &FeatureGallery, mode: DistanceMode) -> Result<Array2<f64>> {
    if gallery.is_empty() {
        return Err(Error::Evaluation("empty gallery".into()));
    }
    if queries.dim() != gallery.dim() || queries.stripes != gallery.stripes {
        return Err(Error::Shape(format!(
            "query features are {}-d in {} parts, gallery {}-d in {} parts",
            queries.dim(),
            queries.stripes,
            gallery.dim(),
            gallery.stripes
        )));
    }
    let r = gallery.stripes;
    let mut out = Array2::<f64>::zeros((queries.len(), gallery.len()));
    for (qi, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let q = queries.row(qi);
        for (gi, d) in row.iter_mut().enumerate() {
            let parts = match mode {
                DistanceMode::Full => 0..r,
                DistanceMode::PrefixByVisibility => shared_range(queries, qi, gallery, gi),
            };
            *d = part_distance(q, gallery.row(gi), parts, r)?;
        }
    }
    Ok(out)
}

/// Mean share of part-`r` activation mass inside stripe `r`, for each part,
/// averaged over `samples`.
pub fn part_locality(model: &Model, samples: &[LabeledSample], pipeline: &ImagePipeline) -> Result<Vec<f64>> {
    let r = model.config().stripes;
    let mut totals = vec![0.0; r];
    if samples.is_empty() {
        return Err(Error::Evaluation("no samples for activation maps".into()));
    }
    for chunk in samples.chunks(32) {
        let grids = chunk
            .iter()
            .map(|s| preprocess_eval(&s.image, pipeline))
            .collect::<Result<Vec<_>>>()?;
        let inf = model.infer(&stack_batch(&grids)?)?;
        for expanded in inf.expanded.outer_iter() {
            let maps = part_activation_maps(&expanded.to_owned(), r)?;
            for (part, map) in maps.iter().enumerate() {
                totals[part] += stripe_mass_share(map, part, r)?;
            }
        }
    }
    Ok(totals.into_iter().map(|t| t / samples.len() as f64).collect())
}
