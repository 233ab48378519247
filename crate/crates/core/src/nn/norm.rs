use ndarray::Array4;

use super::{Layer, Param};

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization. Training mode normalizes with the batch
/// statistics and updates running estimates; inference uses the running
/// estimates, so inference outputs do not depend on batch composition.
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<NormCache>,
}

struct NormCache {
    xhat: Array4<f32>,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.weight"), vec![channels], 1.0),
            beta: Param::filled(format!("{name}.bias"), vec![channels], 0.0),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], 0.0),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], 1.0),
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut y = x.to_owned();
        for (c, mut plane) in y.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let inv = 1.0 / (self.running_var.value[c] + EPS).sqrt();
            let scale = self.gamma.value[c] * inv;
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            plane.mapv_inplace(|v| v * scale + shift);
        }
        y
    }

    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batch norm channel mismatch");
        let count = (n * h * w) as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Vec::with_capacity(c);
        for (ch, mut plane) in xhat.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / count;
            let var = plane
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / count;
            let inv = 1.0 / (var as f32 + EPS).sqrt();
            plane.mapv_inplace(|v| (v - mean as f32) * inv);
            inv_std.push(inv);
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean as f32;
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * unbiased as f32;
        }
        let mut y = xhat.clone();
        for (ch, mut plane) in y.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            plane.mapv_inplace(|v| v * g + b);
        }
        self.cache = Some(NormCache { xhat, inv_std });
        y
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("BatchNorm2d::backward without forward");
        let (n, _, h, w) = grad_out.dim();
        let count = (n * h * w) as f32;
        let mut grad_in = grad_out.to_owned();
        for (ch, mut plane) in grad_in.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let xhat = cache.xhat.index_axis(ndarray::Axis(1), ch);
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for (&dy, &xh) in plane.iter().zip(xhat.iter()) {
                sum_dy += dy as f64;
                sum_dy_xhat += dy as f64 * xh as f64;
            }
            self.beta.grad[ch] += sum_dy as f32;
            self.gamma.grad[ch] += sum_dy_xhat as f32;
            let g = self.gamma.value[ch];
            let k = g * cache.inv_std[ch] / count;
            let mean_dy = sum_dy as f32;
            let mean_dy_xhat = sum_dy_xhat as f32;
            ndarray::Zip::from(&mut plane)
                .and(&xhat)
                .for_each(|d, &xh| *d = k * (count * *d - mean_dy - xh * mean_dy_xhat));
        }
        grad_in
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
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
    fn normalizes_batch_statistics() {
        let mut bn = BatchNorm2d::new("bn", 3);
        let x = random4((4, 3, 3, 2), 5).mapv(|v| 3.0 * v + 2.0);
        let y = bn.forward(&x);
        for plane in y.axis_iter(ndarray::Axis(1)) {
            let mean = plane.mean().unwrap();
            let var = plane.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut bn = BatchNorm2d::new("bn", 2);
        bn.gamma.value = vec![1.5, -0.7];
        bn.beta.value = vec![0.2, 0.1];
        let x = random4((3, 2, 2, 2), 11);
        let err = check_layer(&mut bn, &x, 1e-2);
        assert!(err < 5e-3, "rel err {err}");
    }

    #[test]
    fn inference_uses_running_statistics() {
        let mut bn = BatchNorm2d::new("bn", 1);
        bn.running_mean.value = vec![2.0];
        bn.running_var.value = vec![4.0 - EPS];
        let x = Array4::from_elem((1, 1, 1, 2), 6.0f32);
        let y = bn.infer(&x);
        assert!(y.iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }
}
