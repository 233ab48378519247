//! Adam and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the weights (AdamW) instead of adding
    /// `weight_decay·θ` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }
}

/// Adam with bias-corrected moments, one moment pair per trainable parameter
/// in the order they are passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Param], lr: f64) {
        let trainable: Vec<&mut Param> = params.iter_mut().filter(|p| p.trainable).map(|p| &mut **p).collect();
        if self.first.is_empty() {
            self.first = trainable.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), trainable.len(), "optimizer state does not match parameters");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = c.epsilon as f32;
        let wd = c.weight_decay as f32;
        let decay = (lr * c.weight_decay) as f32;
        for ((p, m), v) in trainable.into_iter().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.value.len() {
                let mut g = p.grad[i];
                if c.decoupled {
                    p.value[i] -= decay * p.value[i];
                } else {
                    g += wd * p.value[i];
                }
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p.value[i] -= step_size * m[i] / denom;
            }
        }
    }
}

/// Piecewise-constant learning rate: `initial` until the first milestone
/// epoch, then each milestone's rate from its epoch (inclusive) onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub milestones: Vec<(usize, f64)>,
}

impl StepSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(self.initial, |&(_, lr)| lr)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |msg: String| Err(crate::Error::InvalidConfig(msg));
        if !(self.initial.is_finite() && self.initial >= 0.0) {
            return bad(format!("lr_initial={} must be finite and nonnegative", self.initial));
        }
        for w in self.milestones.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!(
                    "lr milestones must be strictly increasing, got epoch {} after {}",
                    w[1].0, w[0].0
                ));
            }
        }
        if let Some((e, lr)) = self.milestones.iter().find(|(_, lr)| !(lr.is_finite() && *lr > 0.0)) {
            return bad(format!("milestone at epoch {e} has non-positive rate {lr}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper() -> StepSchedule {
        StepSchedule {
            initial: 1e-3,
            milestones: vec![(80, 1e-4), (180, 1e-5)],
        }
    }

    #[test]
    fn schedule_boundaries() {
        let s = paper();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(79), 1e-3);
        assert_eq!(s.lr_at(80), 1e-4);
        assert_eq!(s.lr_at(179), 1e-4);
        assert_eq!(s.lr_at(180), 1e-5);
        assert_eq!(s.lr_at(299), 1e-5);
        let flat = StepSchedule {
            initial: 0.5,
            milestones: vec![],
        };
        assert_eq!(flat.lr_at(1000), 0.5);
    }

    #[test]
    fn milestones_must_increase() {
        let s = StepSchedule {
            initial: 1e-3,
            milestones: vec![(10, 1e-4), (10, 1e-5)],
        };
        assert!(s.validate().is_err());
        assert!(paper().validate().is_ok());
    }

    /// Adam on f(x, y) = 3x² + 0.5y² from (1, -2), checked against the
    /// update rule written out in f64.
    #[test]
    fn matches_reference_update_on_quadratic() {
        let lr = 0.1;
        let mut p = Param::new("xy", vec![2], vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        let grad = |x: f64, y: f64| [6.0 * x, 1.0 * y];

        let mut x = [1.0f64, -2.0];
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        for t in 1..=3 {
            let g = grad(p.value[0] as f64, p.value[1] as f64);
            p.grad = vec![g[0] as f32, g[1] as f32];
            adam.update(&mut [&mut p], lr);

            let g = grad(x[0], x[1]);
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                x[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
            assert!((p.value[0] as f64 - x[0]).abs() < 1e-5, "step {t}: {} vs {}", p.value[0], x[0]);
            assert!((p.value[1] as f64 - x[1]).abs() < 1e-5, "step {t}: {} vs {}", p.value[1], x[1]);
        }
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = Param::new("w", vec![2], vec![0.0, 0.0]);
        p.grad = vec![4.0, -0.01];
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut [&mut p], 0.01);
        assert!((p.value[0] + 0.01).abs() < 1e-6);
        assert!((p.value[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_forms() {
        // Zero loss gradient: coupled decay still pushes toward zero via the
        // moments; decoupled decay scales the weight directly.
        let mut coupled = Param::new("w", vec![1], vec![2.0]);
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.1,
            ..Default::default()
        });
        adam.update(&mut [&mut coupled], 0.01);
        assert!((coupled.value[0] - 1.99).abs() < 1e-6);

        let mut decoupled = Param::new("w", vec![1], vec![2.0]);
        let mut adamw = Adam::new(AdamConfig {
            weight_decay: 0.1,
            decoupled: true,
            ..Default::default()
        });
        adamw.update(&mut [&mut decoupled], 0.01);
        assert!((decoupled.value[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-6);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut buf = Param::buffer("running_mean", vec![2], 1.0);
        buf.grad = vec![5.0, 5.0];
        let mut w = Param::new("w", vec![1], vec![1.0]);
        w.grad = vec![1.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut [&mut buf, &mut w], 0.1);
        assert_eq!(buf.value, vec![1.0, 1.0]);
        assert_eq!(adam.first.len(), 1);
    }
}
