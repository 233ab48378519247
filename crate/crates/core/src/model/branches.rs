//! The two heads on top of the backbone feature map.
//!
//! The local branch cuts the `C×H×W` map into `R` horizontal stripes (top to
//! bottom) and averages each one into a `C`-vector. The global branch expands
//! the map to `R·C` channels with a 1×1 convolution and averages over all
//! positions; its output is read as `R` consecutive channel blocks, block `r`
//! being paired with stripe `r` during training.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, Axis};

use crate::error::{Error, Result};

/// A single image's backbone activations, `C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Array3<f32>,
    /// Index of the image within the batch it came from.
    pub batch_index: usize,
}

impl FeatureMap {
    pub fn new(values: Array3<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature map has non-finite entries".into()));
        }
        Ok(Self {
            values,
            batch_index: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }

    fn as_batch(&self) -> Array4<f32> {
        self.values.clone().insert_axis(Axis(0))
    }
}

/// `R` stripe-pooled vectors of `C` channels, ordered top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    pub parts: Array2<f32>,
}

impl LocalFeatureSet {
    pub fn stripes(&self) -> usize {
        self.parts.nrows()
    }

    pub fn part(&self, r: usize) -> ArrayView1<'_, f32> {
        self.parts.row(r)
    }
}

/// The `R·C` inference-time descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub values: Array1<f32>,
    pub stripes: usize,
}

impl GlobalFeature {
    pub fn new(values: Array1<f32>, stripes: usize) -> Result<Self> {
        if stripes == 0 || !values.len().is_multiple_of(stripes) {
            return Err(Error::Shape(format!(
                "global feature of length {} cannot hold {stripes} parts",
                values.len()
            )));
        }
        Ok(Self { values, stripes })
    }

    pub fn part_dim(&self) -> usize {
        self.values.len() / self.stripes
    }

    /// Channels `[r·C, (r+1)·C)`.
    pub fn part(&self, r: usize) -> ArrayView1<'_, f32> {
        let c = self.part_dim();
        self.values.slice(s![r * c..(r + 1) * c])
    }
}

/// Weights of the channel-expanding 1×1 convolution: `out×in` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Conv1x1 {
    pub fn new(weight: Array2<f32>, bias: Array1<f32>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "1x1 conv has {} output rows but {} biases",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the convolution at every spatial position of a `C×H×W` map.
    pub fn apply(&self, map: &Array3<f32>) -> Result<Array3<f32>> {
        let (c, h, w) = map.dim();
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "1x1 conv expects {} input channels, feature map has {c}",
                self.in_channels()
            )));
        }
        let flat = map
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, h * w))
            .unwrap();
        let mut out = self.weight.dot(&flat);
        for (mut row, &b) in out.rows_mut().into_iter().zip(&self.bias) {
            row += b;
        }
        Ok(out.into_shape_with_order((self.out_channels(), h, w)).unwrap())
    }
}

/// Batched stripe pooling: `N×C×H×W` to `N×R×C`.
pub fn stripe_pool(fm: &Array4<f32>, stripes: usize) -> Result<Array3<f32>> {
    let (n, c, h, w) = fm.dim();
    check_stripes(h, stripes)?;
    let rows = h / stripes;
    let denom = (rows * w) as f64;
    let mut out = Array3::<f32>::zeros((n, stripes, c));
    for b in 0..n {
        for ch in 0..c {
            let plane = fm.slice(s![b, ch, .., ..]);
            for r in 0..stripes {
                let sum: f64 = plane
                    .slice(s![r * rows..(r + 1) * rows, ..])
                    .iter()
                    .map(|&v| v as f64)
                    .sum();
                out[[b, r, ch]] = (sum / denom) as f32;
            }
        }
    }
    Ok(out)
}

/// Spreads `N×R×C` stripe gradients uniformly back over each stripe.
pub fn stripe_pool_backward(grad: &ArrayView3<f32>, h: usize, w: usize) -> Array4<f32> {
    let (n, stripes, c) = grad.dim();
    let rows = h / stripes;
    let scale = 1.0 / (rows * w) as f32;
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for b in 0..n {
        for ch in 0..c {
            for r in 0..stripes {
                let g = grad[[b, r, ch]] * scale;
                out.slice_mut(s![b, ch, r * rows..(r + 1) * rows, ..]).fill(g);
            }
        }
    }
    out
}

/// Global average pooling: `N×C×H×W` to `N×C`.
pub fn global_average_pool(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let denom = (h * w) as f64;
    Array2::from_shape_fn((n, c), |(b, ch)| {
        let sum: f64 = x.slice(s![b, ch, .., ..]).iter().map(|&v| v as f64).sum();
        (sum / denom) as f32
    })
}

pub fn global_average_pool_backward(grad: &Array2<f32>, h: usize, w: usize) -> Array4<f32> {
    let (n, c) = grad.dim();
    let scale = 1.0 / (h * w) as f32;
    Array4::from_shape_fn((n, c, h, w), |(b, ch, _, _)| grad[[b, ch]] * scale)
}

fn check_stripes(h: usize, stripes: usize) -> Result<()> {
    if stripes == 0 || !h.is_multiple_of(stripes) {
        return Err(Error::Shape(format!(
            "feature map height {h} is not divisible into {stripes} stripes"
        )));
    }
    Ok(())
}

/// Stripe-pooled local features of one feature map.
pub fn local_branch(fm: &FeatureMap, stripes: usize) -> Result<LocalFeatureSet> {
    let pooled = stripe_pool(&fm.as_batch(), stripes)?;
    Ok(LocalFeatureSet {
        parts: pooled.index_axis_move(Axis(0), 0),
    })
}

/// Expanded-then-pooled global feature of one feature map.
pub fn global_branch(fm: &FeatureMap, expansion: &Conv1x1) -> Result<GlobalFeature> {
    let c = fm.channels();
    if !expansion.out_channels().is_multiple_of(c) {
        return Err(Error::Shape(format!(
            "expansion to {} channels is not a multiple of C={c}",
            expansion.out_channels()
        )));
    }
    let expanded = expansion.apply(&fm.values)?;
    let pooled = global_average_pool(&expanded.insert_axis(Axis(0)));
    GlobalFeature::new(
        pooled.index_axis_move(Axis(0), 0),
        expansion.out_channels() / c,
    )
}

/// Contiguous equal channel blocks of a flat feature vector.
pub fn split_channels(values: &[f32], stripes: usize) -> Result<Vec<&[f32]>> {
    if stripes == 0 || !values.len().is_multiple_of(stripes) {
        return Err(Error::Shape(format!(
            "length {} is not divisible into {stripes} parts",
            values.len()
        )));
    }
    Ok(values.chunks_exact(values.len() / stripes).collect())
}

pub fn concat_parts(parts: &[&[f32]]) -> Vec<f32> {
    parts.concat()
}

/// Per-part activation maps of an expanded `R·C×H×W` map: map `r` holds, at
/// every position, the maximum over channels `[r·C, (r+1)·C)`.
pub fn part_activation_maps(expanded: &Array3<f32>, stripes: usize) -> Result<Vec<Array2<f32>>> {
    let (channels, h, w) = expanded.dim();
    if stripes == 0 || channels % stripes != 0 {
        return Err(Error::Shape(format!(
            "{channels} channels are not divisible into {stripes} parts"
        )));
    }
    let block = channels / stripes;
    Ok((0..stripes)
        .map(|r| {
            let part = expanded.slice(s![r * block..(r + 1) * block, .., ..]);
            Array2::from_shape_fn((h, w), |(y, x)| {
                part.slice(s![.., y, x])
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, f32::max)
            })
        })
        .collect())
}

/// Share of a map's activation mass that falls inside stripe `r` of `R`.
///
/// The map is shifted so its minimum is zero, which is also how heatmaps are
/// rendered; a constant map spreads its mass uniformly.
pub fn stripe_mass_share(map: &Array2<f32>, stripe: usize, stripes: usize) -> Result<f64> {
    let (h, _) = map.dim();
    check_stripes(h, stripes)?;
    if stripe >= stripes {
        return Err(Error::InvalidArgument(format!(
            "stripe {stripe} out of range for {stripes}"
        )));
    }
    let min = map.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let total: f64 = map.iter().map(|&v| v as f64 - min).sum();
    if total <= 0.0 {
        return Ok(1.0 / stripes as f64);
    }
    let rows = h / stripes;
    let inside: f64 = map
        .slice(s![stripe * rows..(stripe + 1) * rows, ..])
        .iter()
        .map(|&v| v as f64 - min)
        .sum();
    Ok(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(-2.0..2.0))).unwrap()
    }

    #[test]
    fn constant_map_gives_constant_parts() {
        let fm = FeatureMap::new(Array3::from_elem((3, 8, 4), 1.25)).unwrap();
        for r in [1, 2, 4, 8] {
            let local = local_branch(&fm, r).unwrap();
            assert_eq!(local.stripes(), r);
            assert!(local.parts.iter().all(|&v| v == 1.25));
        }
    }

    #[test]
    fn hand_computed_stripe_means() {
        let fm = FeatureMap::new(Array3::from_shape_vec((1, 4, 1), vec![1., 2., 3., 4.]).unwrap())
            .unwrap();
        let local = local_branch(&fm, 2).unwrap();
        assert_eq!(local.parts, arr2(&[[1.5], [3.5]]));
    }

    #[test]
    fn single_stripe_is_whole_map_average() {
        let fm = random_map(5, 8, 4, 1);
        let local = local_branch(&fm, 1).unwrap();
        let gap = global_average_pool(&fm.as_batch());
        assert_eq!(local.parts.row(0), gap.row(0));
    }

    #[test]
    fn indivisible_height_is_rejected() {
        let fm = random_map(2, 8, 4, 2);
        assert!(local_branch(&fm, 3).is_err());
    }

    #[test]
    fn identity_expansion_tiles_gap() {
        let fm = random_map(3, 8, 4, 3);
        let r = 4;
        let weight = Array2::from_shape_fn((r * 3, 3), |(o, i)| if o % 3 == i { 1.0 } else { 0.0 });
        let conv = Conv1x1::new(weight, Array1::zeros(r * 3)).unwrap();
        let gf = global_branch(&fm, &conv).unwrap();
        let gap = global_average_pool(&fm.as_batch());
        for part in 0..r {
            assert_eq!(gf.part(part), gap.row(0));
        }
    }

    #[test]
    fn global_branch_equals_dense_map_of_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fm = random_map(2, 8, 4, 5);
        let weight = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let conv = Conv1x1::new(weight.clone(), bias.clone()).unwrap();
        let gf = global_branch(&fm, &conv).unwrap();
        // Brute force: average each channel, then a plain matrix-vector product.
        let mut gap = [0.0f64; 2];
        for c in 0..2 {
            for y in 0..8 {
                for x in 0..4 {
                    gap[c] += fm.values[[c, y, x]] as f64 / 32.0;
                }
            }
        }
        for o in 0..4 {
            let expect = weight[[o, 0]] as f64 * gap[0] + weight[[o, 1]] as f64 * gap[1] + bias[o] as f64;
            assert!((gf.values[o] as f64 - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn paper_scale_global_feature_width() {
        let fm = FeatureMap::new(Array3::zeros((2048, 8, 4))).unwrap();
        let conv = Conv1x1::new(Array2::zeros((8192, 2048)), Array1::zeros(8192)).unwrap();
        let gf = global_branch(&fm, &conv).unwrap();
        assert_eq!(gf.values.len(), 8192);
        assert_eq!(gf.stripes, 4);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let fm = random_map(3, 8, 4, 6);
        let conv = Conv1x1::new(Array2::zeros((8, 2)), Array1::zeros(8)).unwrap();
        assert!(global_branch(&fm, &conv).is_err());
    }

    #[test]
    fn split_contiguous_slices() {
        let v: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let parts = split_channels(&v, 4).unwrap();
        assert_eq!(parts, vec![&[0., 1.][..], &[2., 3.], &[4., 5.], &[6., 7.]]);
        assert_eq!(split_channels(&v, 1).unwrap(), vec![&v[..]]);
        assert!(split_channels(&v, 3).is_err());
    }

    #[test]
    fn activation_maps_hand_case() {
        // Two parts of two channels each on a 2×2 grid.
        let expanded = Array3::from_shape_vec(
            (4, 2, 2),
            vec![1., 5., 3., 0., 2., 4., 1., 7., -1., 0., 0., 0., 6., -2., 2., 1.],
        )
        .unwrap();
        let maps = part_activation_maps(&expanded, 2).unwrap();
        assert_eq!(maps[0], arr2(&[[2., 5.], [3., 7.]]));
        assert_eq!(maps[1], arr2(&[[6., 0.], [2., 1.]]));
    }

    #[test]
    fn activation_maps_single_support_and_symmetry() {
        let mut expanded = Array3::from_elem((4, 2, 2), -10.0f32);
        let hot = arr2(&[[1.0f32, 2.0], [3.0, 4.0]]);
        expanded.slice_mut(s![1, .., ..]).assign(&hot);
        let maps = part_activation_maps(&expanded, 2).unwrap();
        assert_eq!(maps[0], hot);

        let same = Array3::from_shape_fn((6, 2, 3), |(_, y, x)| (y * 3 + x) as f32);
        let maps = part_activation_maps(&same, 3).unwrap();
        assert!(maps.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn mass_share_of_concentrated_and_flat_maps() {
        let mut map = Array2::<f32>::zeros((8, 4));
        map.slice_mut(s![2..4, ..]).fill(1.0);
        assert_eq!(stripe_mass_share(&map, 1, 4).unwrap(), 1.0);
        assert_eq!(stripe_mass_share(&map, 0, 4).unwrap(), 0.0);
        let flat = Array2::<f32>::from_elem((8, 4), 3.0);
        assert_eq!(stripe_mass_share(&flat, 2, 4).unwrap(), 0.25);
    }

    #[test]
    fn conv1x1_apply_matches_manual() {
        let conv = Conv1x1::new(arr2(&[[1.0, 2.0], [0.0, -1.0]]), arr1(&[0.5, 0.0])).unwrap();
        let map = Array::from_shape_vec((2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = conv.apply(&map).unwrap();
        assert_eq!(out.into_raw_vec_and_offset().0, vec![7.5, 10.5, -3.0, -4.0]);
    }

    proptest! {
        #[test]
        fn stripe_pooling_is_linear(seed in 0u64..1000, alpha in -3.0f32..3.0, beta in -3.0f32..3.0) {
            let a = random_map(3, 8, 4, seed);
            let b = random_map(3, 8, 4, seed + 10_000);
            let mix = FeatureMap::new(&a.values * alpha + &b.values * beta).unwrap();
            let lhs = local_branch(&mix, 4).unwrap().parts;
            let rhs = local_branch(&a, 4).unwrap().parts * alpha + local_branch(&b, 4).unwrap().parts * beta;
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn split_then_concat_round_trips(
            values in proptest::collection::vec(-1e6f32..1e6, 1..16usize),
            stripes in prop::sample::select(vec![1usize, 2, 4, 8]),
        ) {
            let mut v = values;
            while v.len() % stripes != 0 { v.push(0.5); }
            let parts = split_channels(&v, stripes).unwrap();
            prop_assert_eq!(parts.len(), stripes);
            prop_assert_eq!(concat_parts(&parts), v);
        }
    }
}
