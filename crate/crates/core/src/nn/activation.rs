use ndarray::Array4;

use super::{Layer, Param};

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        x.mapv(|v| v.max(0.0))
    }

    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        self.mask = Some(x.iter().map(|&v| v > 0.0).collect());
        self.infer(x)
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("Relu::backward without forward");
        let mut g = grad_out.as_standard_layout().into_owned();
        for (v, keep) in g.iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
        g
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Max pooling with implicit negative-infinity padding.
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<((usize, usize, usize, usize), Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Output plus, for every output element, the flat input index it came from.
    fn run(&self, x: &Array4<f32>) -> (Array4<f32>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.output_size(h, w);
        let x = x.as_standard_layout();
        let src = x.as_slice().unwrap();
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let mut arg = Vec::with_capacity(out.len());
        let pad = self.padding as isize;
        for (plane_idx, dst) in out
            .as_slice_mut()
            .unwrap()
            .chunks_exact_mut(oh * ow)
            .enumerate()
        {
            let base = plane_idx * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = base;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    dst[oy * ow + ox] = best;
                    arg.push(best_idx);
                }
            }
        }
        (out, arg)
    }
}

impl Layer for MaxPool2d {
    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.run(x).0
    }

    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (out, arg) = self.run(x);
        self.cache = Some((x.dim(), arg));
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let (dim, arg) = self.cache.take().expect("MaxPool2d::backward without forward");
        let mut grad_in = Array4::<f32>::zeros(dim);
        let dst = grad_in.as_slice_mut().unwrap();
        for (&idx, &g) in arg.iter().zip(grad_out.iter()) {
            dst[idx] += g;
        }
        grad_in
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random4};

    #[test]
    fn relu_gradient() {
        let x = random4((2, 2, 3, 3), 4);
        assert!(check_layer(&mut Relu::new(), &x, 1e-3) < 1e-3);
    }

    #[test]
    fn maxpool_shape_and_gradient() {
        let mut pool = MaxPool2d::new(3, 2, 1);
        let x = random4((1, 2, 8, 4), 8);
        assert_eq!(pool.infer(&x).dim(), (1, 2, 4, 2));
        assert!(check_layer(&mut pool, &x, 1e-3) < 1e-3);
    }
}
