use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::{Layer, Param};

/// 2-D convolution over `N×C×H×W` input, computed as im2col followed by a
/// matrix product per image.
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<ConvCache>,
}

struct ConvCache {
    input_dim: (usize, usize, usize, usize),
    // Per-image column matrices; for pointwise convolutions these are the
    // input planes themselves.
    cols: Vec<Array2<f32>>,
}

impl Conv2d {
    /// Kaiming-normal (fan-in, ReLU gain) initialized convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let weight = Param::normal(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            (2.0 / fan_in).sqrt(),
            rng,
        );
        let bias = bias.then(|| Param::filled(format!("{name}.bias"), vec![out_channels], 0.0));
        Self::from_params(in_channels, out_channels, kernel, stride, padding, weight, bias)
    }

    pub fn from_params(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Param,
        bias: Option<Param>,
    ) -> Self {
        assert!(stride >= 1 && kernel >= 1);
        assert_eq!(weight.len(), out_channels * in_channels * kernel * kernel);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        (
            (h + 2 * p - k) / self.stride + 1,
            (w + 2 * p - k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        let cols = self.in_channels * self.kernel * self.kernel;
        ArrayView2::from_shape((self.out_channels, cols), &self.weight.value).unwrap()
    }

    fn columns(&self, image: &[f32], h: usize, w: usize) -> Array2<f32> {
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        if self.is_pointwise() {
            return Array2::from_shape_vec((self.in_channels, h * w), image.to_vec()).unwrap();
        }
        let mut cols = Array2::<f32>::zeros((self.in_channels * k * k, oh * ow));
        let out = cols.as_slice_mut().unwrap();
        let pad = self.padding as isize;
        for c in 0..self.in_channels {
            let plane = &image[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut out[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn add_columns(&self, cols: &[f32], h: usize, w: usize, grad_image: &mut [f32]) {
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let pad = self.padding as isize;
        for c in 0..self.in_channels {
            let plane = &mut grad_image[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn run(&self, x: &Array4<f32>, keep: bool) -> (Array4<f32>, Vec<Array2<f32>>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.output_size(h, w);
        let mut out = Array4::<f32>::zeros((n, self.out_channels, oh, ow));
        let x = x.as_standard_layout();
        let input = x.as_slice().unwrap();
        let plane_in = c * h * w;
        let plane_out = self.out_channels * oh * ow;
        let weight = self.weight_matrix();
        let mut kept = Vec::with_capacity(if keep { n } else { 0 });
        for (i, dst) in out
            .as_slice_mut()
            .unwrap()
            .chunks_exact_mut(plane_out)
            .enumerate()
        {
            let cols = self.columns(&input[i * plane_in..(i + 1) * plane_in], h, w);
            let mut dst2 = ArrayViewMut2::from_shape((self.out_channels, oh * ow), dst).unwrap();
            general_mat_mul(1.0, &weight, &cols, 0.0, &mut dst2);
            if let Some(bias) = &self.bias {
                for (mut row, &b) in dst2.rows_mut().into_iter().zip(&bias.value) {
                    row += b;
                }
            }
            if keep {
                kept.push(cols);
            }
        }
        (out, kept)
    }
}

impl Layer for Conv2d {
    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.run(x, false).0
    }

    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (out, cols) = self.run(x, true);
        self.cache = Some(ConvCache {
            input_dim: x.dim(),
            cols,
        });
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("Conv2d::backward without forward");
        let (n, c, h, w) = cache.input_dim;
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let rows = c * k * k;
        let grad_out = grad_out.as_standard_layout();
        let g = grad_out.as_slice().unwrap();
        let plane_out = self.out_channels * oh * ow;

        let mut grad_w = Array2::<f32>::zeros((self.out_channels, rows));
        let mut grad_in = Array4::<f32>::zeros((n, c, h, w));
        let mut dcols = Array2::<f32>::zeros((rows, oh * ow));
        let mut grad_b = vec![0.0f32; self.out_channels];
        let weight_t = self.weight_matrix().reversed_axes();
        let plane_in = c * h * w;
        let grad_in_slice = grad_in.as_slice_mut().unwrap();
        for (i, cols) in cache.cols.iter().enumerate() {
            let g2 = ArrayView2::from_shape(
                (self.out_channels, oh * ow),
                &g[i * plane_out..(i + 1) * plane_out],
            )
            .unwrap();
            general_mat_mul(1.0, &g2, &cols.t(), 1.0, &mut grad_w);
            for (gb, row) in grad_b.iter_mut().zip(g2.rows()) {
                *gb += row.sum();
            }
            let dst = &mut grad_in_slice[i * plane_in..(i + 1) * plane_in];
            if self.is_pointwise() {
                let mut dst2 = ArrayViewMut2::from_shape((c, h * w), dst).unwrap();
                general_mat_mul(1.0, &weight_t, &g2, 0.0, &mut dst2);
            } else {
                general_mat_mul(1.0, &weight_t, &g2, 0.0, &mut dcols);
                self.add_columns(dcols.as_slice().unwrap(), h, w, dst);
            }
        }
        for (acc, v) in self.weight.grad.iter_mut().zip(grad_w.iter()) {
            *acc += v;
        }
        if let Some(bias) = &mut self.bias {
            for (acc, v) in bias.grad.iter_mut().zip(&grad_b) {
                *acc += v;
            }
        }
        grad_in
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
