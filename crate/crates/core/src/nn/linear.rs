use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::Param;

/// Fully connected layer on `N×D` rows.
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f32>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_features: usize,
        out_features: usize,
        std: f32,
        rng: &mut R,
    ) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::normal(
                format!("{name}.weight"),
                vec![out_features, in_features],
                std,
                rng,
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_features], 0.0),
            input: None,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value).unwrap()
    }

    pub fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        assert_eq!(x.ncols(), self.in_features, "linear input width mismatch");
        let mut out = Array2::<f32>::zeros((x.nrows(), self.out_features));
        general_mat_mul(1.0, x, &self.weight_matrix().t(), 0.0, &mut out);
        for mut row in out.rows_mut() {
            row.iter_mut()
                .zip(&self.bias.value)
                .for_each(|(v, b)| *v += b);
        }
        out
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        self.input = Some(x.to_owned());
        self.infer(x)
    }

    pub fn backward(&mut self, grad_out: &Array2<f32>) -> Array2<f32> {
        let x = self.input.take().expect("Linear::backward without forward");
        let mut gw = ndarray::ArrayViewMut2::from_shape(
            (self.out_features, self.in_features),
            &mut self.weight.grad,
        )
        .unwrap();
        general_mat_mul(1.0, &grad_out.t(), &x, 1.0, &mut gw);
        for row in grad_out.rows() {
            self.bias
                .grad
                .iter_mut()
                .zip(row.iter())
                .for_each(|(g, v)| *g += v);
        }
        grad_out.dot(&self.weight_matrix())
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Inverted dropout: kept units are scaled by `1/(1-rate)` during training.
pub struct Dropout {
    pub rate: f32,
    mask: Option<Array2<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..=1.0).contains(&rate), "dropout rate outside [0,1]");
        Self { rate, mask: None }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Array2<f32>, rng: &mut R) -> Array2<f32> {
        let keep = 1.0 - self.rate;
        let mask = if keep <= 0.0 {
            Array2::zeros(x.raw_dim())
        } else {
            let scale = 1.0 / keep;
            Array2::from_shape_fn(x.raw_dim(), |_| {
                if rng.random::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
        };
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &Array2<f32>) -> Array2<f32> {
        let mask = self.mask.take().expect("Dropout::backward without forward");
        grad_out * &mask
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}
