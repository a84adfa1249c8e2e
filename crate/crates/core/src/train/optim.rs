use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nets::ParamStore;

/// One-cycle learning-rate schedule: cosine warmup from `peak / div` to
/// `peak` over the first `warmup` fraction of steps, then cosine decay to
/// `floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub floor: f64,
    pub warmup: f64,
    pub div: f64,
    pub total_steps: usize,
}

impl OneCycle {
    pub fn lr(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let t = (step as f64 / total).min(1.0);
        let cos = |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (PI * frac).cos());
        let start = self.peak / self.div;
        if self.warmup > 0.0 && t < self.warmup {
            cos(start, self.peak, t / self.warmup)
        } else {
            let rest = (1.0 - self.warmup).max(f64::EPSILON);
            cos(self.peak, self.floor, ((t - self.warmup) / rest).clamp(0.0, 1.0))
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || store.entries().iter().map(|e| vec![0.0; e.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. Biases and gates (rank-1 tensors) are not decayed.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f32>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Consistency(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = self.eps as f32;
        for (i, g) in grads.iter().enumerate() {
            let decay = if store.entries()[i].shape.len() > 1 {
                (1.0 - lr * self.weight_decay) as f32
            } else {
                1.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = store.values_mut(i);
            if g.len() != w.len() {
                return Err(Error::Consistency(format!("gradient {i} has the wrong length")));
            }
            for k in 0..w.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let denom = (v[k] * inv_bc2).sqrt() + eps;
                w[k] = w[k] * decay - step_size * m[k] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_shape() {
        let s = OneCycle {
            peak: 1e-3,
            floor: 1e-5,
            warmup: 0.3,
            div: 25.0,
            total_steps: 100,
        };
        assert!((s.lr(0) - 4e-5).abs() < 1e-12);
        assert!((s.lr(30) - 1e-3).abs() < 1e-12);
        assert!((s.lr(100) - 1e-5).abs() < 1e-12);
        for i in 0..30 {
            assert!(s.lr(i + 1) >= s.lr(i));
        }
        for i in 30..100 {
            assert!(s.lr(i + 1) <= s.lr(i));
        }
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.insert("w", &[1, 2], vec![3.0, -2.0]).unwrap();
        let mut opt = AdamW::new(&store, 0.0);
        for _ in 0..2000 {
            let g: Vec<f32> = store.entries()[0].data.iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.step(&mut store, &[g], 1e-2).unwrap();
        }
        for x in store.entries()[0].data.iter() {
            assert!((x - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("b", &[1], vec![0.0]).unwrap();
        let mut opt = AdamW::new(&store, 0.01);
        opt.step(&mut store, &[vec![5.0]], 0.1).unwrap();
        assert!((store.entries()[0].data[0] + 0.1).abs() < 1e-6);
    }
}
