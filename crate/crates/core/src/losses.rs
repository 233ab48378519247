//! Training objectives, evaluated in `f64` with analytic gradients.
//!
//! * identity classification: mean softmax cross-entropy
//! * metric: batch-hard triplet loss on Euclidean distances
//! * spatial-channel parallelism: squared distance between each stripe
//!   feature and the matching channel block of the global feature
//!
//! The total is `class + metric + λ·scp`.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScpReduction {
    /// Average per-image losses over the batch.
    #[default]
    Mean,
    /// Sum per-image losses over the batch.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight λ of the spatial-channel parallelism term.
    pub lambda_scp: f64,
    pub triplet_margin: f64,
    /// Use `ln(1 + e^x)` in place of the hinge; `triplet_margin` is then unused.
    #[serde(default)]
    pub soft_margin: bool,
    #[serde(default)]
    pub scp_reduction: ScpReduction,
    /// Block the parallelism gradient into the local branch.
    #[serde(default)]
    pub stop_gradient_local: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_scp: 10.0,
            triplet_margin: 0.3,
            soft_margin: false,
            scp_reduction: ScpReduction::Mean,
            stop_gradient_local: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_scp.is_finite() || self.lambda_scp < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_scp={} must be finite and nonnegative",
                self.lambda_scp
            )));
        }
        if !self.triplet_margin.is_finite() || self.triplet_margin < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "triplet_margin={} must be finite and nonnegative",
                self.triplet_margin
            )));
        }
        Ok(())
    }

    pub fn margin(&self) -> Margin {
        if self.soft_margin {
            Margin::Soft
        } else {
            Margin::Hard(self.triplet_margin)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    Hard(f64),
    Soft,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_class: f64,
    pub l_metric: f64,
    pub l_scp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_class, self.l_metric, self.l_scp, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Combines the three components as `class + metric + λ·scp`.
pub fn total_loss(l_class: f64, l_metric: f64, l_scp: f64, weights: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_class,
        l_metric,
        l_scp,
        total: l_class + l_metric + weights.lambda_scp * l_scp,
    }
}

/// Per-image parallelism loss: `Σ_r ‖local_r − global_r‖²`.
pub fn scp_loss(local: &[&[f64]], global_parts: &[&[f64]]) -> Result<f64> {
    check_parts(local, global_parts)?;
    Ok(local
        .iter()
        .zip(global_parts)
        .map(|(s, c)| s.iter().zip(*c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum())
}

/// Value plus gradients with respect to the local and global parts.
pub fn scp_loss_grad(
    local: &[&[f64]],
    global_parts: &[&[f64]],
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let value = scp_loss(local, global_parts)?;
    let d_local: Vec<Vec<f64>> = local
        .iter()
        .zip(global_parts)
        .map(|(s, c)| s.iter().zip(*c).map(|(a, b)| 2.0 * (a - b)).collect())
        .collect();
    let d_global = d_local
        .iter()
        .map(|d| d.iter().map(|v| -v).collect())
        .collect();
    Ok((value, d_local, d_global))
}

fn check_parts(local: &[&[f64]], global_parts: &[&[f64]]) -> Result<()> {
    if local.len() != global_parts.len() {
        return Err(Error::Shape(format!(
            "{} local parts but {} global parts",
            local.len(),
            global_parts.len()
        )));
    }
    for (r, (s, c)) in local.iter().zip(global_parts).enumerate() {
        if s.len() != c.len() {
            return Err(Error::Shape(format!(
                "part r={r}: local has {} channels, global part has {}",
                s.len(),
                c.len()
            )));
        }
    }
    Ok(())
}

/// Batched parallelism loss over `N×R×C` local features and `N×RC` global
/// features. Returns the reduced value and both input gradients.
pub fn scp_loss_batch(
    local: ArrayView3<f64>,
    global: ArrayView2<f64>,
    reduction: ScpReduction,
) -> Result<(f64, Array3<f64>, Array2<f64>)> {
    let (n, r, c) = local.dim();
    if global.dim() != (n, r * c) {
        return Err(Error::Shape(format!(
            "local features {n}×{r}×{c} do not pair with global {:?}",
            global.dim()
        )));
    }
    let scale = match reduction {
        ScpReduction::Mean => 1.0 / n.max(1) as f64,
        ScpReduction::Sum => 1.0,
    };
    let global3 = global.into_shape_with_order((n, r, c)).unwrap();
    let diff = &local - &global3;
    let value = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    let d_local = diff.mapv(|d| 2.0 * d * scale);
    let d_global = d_local
        .mapv(|d| -d)
        .into_shape_with_order((n, r * c))
        .unwrap();
    Ok((value, d_local, d_global))
}

/// Per-image parallelism losses (no reduction), used for diagnostics.
pub fn scp_loss_per_image(local: ArrayView3<f64>, global: ArrayView2<f64>) -> Result<Vec<f64>> {
    let (n, r, c) = local.dim();
    if global.dim() != (n, r * c) {
        return Err(Error::Shape("local/global batch shapes differ".into()));
    }
    Ok((0..n)
        .map(|i| {
            let l = local.index_axis(Axis(0), i);
            let g = global.row(i);
            l.iter().zip(g.iter()).map(|(a, b)| (a - b).powi(2)).sum()
        })
        .collect())
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_triplet_batch(n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    let first = labels.first().ok_or(Error::SingleIdentity)?;
    if labels.iter().all(|l| l == first) {
        return Err(Error::SingleIdentity);
    }
    let has_positive = (0..n).any(|i| (0..n).any(|j| j != i && labels[j] == labels[i]));
    if !has_positive {
        return Err(Error::InvalidArgument(
            "triplet batch has no identity with two samples".into(),
        ));
    }
    Ok(())
}

/// Batch-hard triplet loss. For every anchor the farthest same-identity
/// sample and the nearest other-identity sample form the triplet; the anchor
/// itself counts as a positive at distance zero. Ties go to the lower index.
pub fn trihard_loss(embeddings: ArrayView2<f64>, labels: &[usize], margin: Margin) -> Result<f64> {
    Ok(trihard_loss_grad(embeddings, labels, margin)?.0)
}

/// Loss value and gradient with respect to the embeddings.
pub fn trihard_loss_grad(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    margin: Margin,
) -> Result<(f64, Array2<f64>)> {
    let n = embeddings.nrows();
    check_triplet_batch(n, labels)?;
    let dist = Array2::from_shape_fn((n, n), |(i, j)| {
        euclidean(embeddings.row(i), embeddings.row(j))
    });
    let mut grad = Array2::<f64>::zeros(embeddings.raw_dim());
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for a in 0..n {
        let mut pos = a;
        let mut neg = usize::MAX;
        for j in 0..n {
            if labels[j] == labels[a] {
                if dist[[a, j]] > dist[[a, pos]] {
                    pos = j;
                }
            } else if neg == usize::MAX || dist[[a, j]] < dist[[a, neg]] {
                neg = j;
            }
        }
        let x = dist[[a, pos]] - dist[[a, neg]];
        let (value, slope) = match margin {
            Margin::Hard(m) => {
                let v = m + x;
                if v > 0.0 {
                    (v, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Margin::Soft => (softplus(x), sigmoid(x)),
        };
        total += value;
        if slope == 0.0 {
            continue;
        }
        let w = slope * inv_n;
        for (other, sign) in [(pos, 1.0), (neg, -1.0)] {
            let d = dist[[a, other]];
            if other == a || d == 0.0 {
                continue;
            }
            let diff = (&embeddings.row(a) - &embeddings.row(other)) * (sign * w / d);
            {
                let mut ga = grad.row_mut(a);
                ga += &diff;
            }
            let mut go = grad.row_mut(other);
            go -= &diff;
        }
    }
    Ok((total * inv_n, grad))
}

/// Mean softmax cross-entropy.
pub fn classification_loss(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    Ok(classification_loss_grad(logits, labels)?.0)
}

pub fn classification_loss_grad(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let mut grad = Array2::<f64>::zeros((n, k));
    let mut total = 0.0;
    for (i, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        for (j, &v) in row.iter().enumerate() {
            grad[[i, j]] = (v - log_z).exp() / n as f64;
        }
        grad[[i, label]] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}
