//! Minimal layer library with hand-written backward passes.
//!
//! Activations are `N×C×H×W` arrays in standard layout. Every layer has two
//! forward paths: [`Layer::infer`] borrows the layer immutably and never
//! caches, so concurrent inference on a shared model is safe, while
//! [`Layer::forward`] runs in training mode and keeps what
//! [`Layer::backward`] needs.

mod activation;
mod conv;
mod linear;
mod norm;

pub use activation::{MaxPool2d, Relu};
pub use conv::Conv2d;
pub use linear::{Dropout, Linear};
pub use norm::BatchNorm2d;

use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A named tensor owned by a layer, with its gradient accumulator.
///
/// Non-trainable parameters (batch-norm running statistics) are persisted in
/// checkpoints but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, value.len(), "param value length does not match shape");
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; len],
            trainable: true,
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, fill: f32) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![fill; len])
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, fill: f32) -> Self {
        let mut p = Self::filled(name, shape, fill);
        p.trainable = false;
        p
    }

    /// Zero-mean normal init with the given standard deviation.
    pub fn normal<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f32,
        rng: &mut R,
    ) -> Self {
        let len: usize = shape.iter().product();
        let dist = Normal::new(0.0f32, std).expect("finite std");
        let value = (0..len).map(|_| dist.sample(rng)).collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Layer: Send + Sync {
    /// Inference-mode forward pass.
    fn infer(&self, x: &Array4<f32>) -> Array4<f32>;

    /// Training-mode forward pass; caches state for `backward`.
    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32>;

    /// Accumulates parameter gradients and returns the input gradient.
    ///
    /// Panics if called without a preceding `forward`.
    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32>;

    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Drops any cached training state.
    fn clear_cache(&mut self) {}
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut iter = self.layers.iter();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut out = first.infer(x);
        for layer in iter {
            out = layer.infer(&out);
        }
        out
    }

    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut out = first.forward(x);
        for layer in iter {
            out = layer.forward(&out);
        }
        out
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let mut iter = self.layers.iter_mut().rev();
        let Some(last) = iter.next() else {
            return grad_out.clone();
        };
        let mut grad = last.backward(grad_out);
        for layer in iter {
            grad = layer.backward(&grad);
        }
        grad
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }
}
