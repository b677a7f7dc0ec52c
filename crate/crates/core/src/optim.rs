//! AdamW with decoupled weight decay, cosine annealing with warm restarts,
//! and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Matrix<T>> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Matrix<T>>, grads: &[Matrix<T>], lr: f64) {
        let params: Vec<&mut Matrix<T>> = params.into_iter().collect();
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer state size mismatch");
        self.t += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * c.weight_decay);
        let eps = T::of(c.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in it {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p = *p * decay - lr_t * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Learning rate as a function of the optimizer step; the first cycle lasts
/// `t0` steps and each later cycle is `t_mult` times longer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub base_lr: f64,
    pub eta_min: f64,
    pub t0: u64,
    pub t_mult: u64,
}

impl CosineWarmRestarts {
    pub fn lr_at(&self, step: u64) -> f64 {
        let t0 = self.t0.max(1);
        let (mut t_cur, mut t_i) = (step, t0);
        if self.t_mult <= 1 {
            t_cur = step % t0;
        } else {
            while t_cur >= t_i {
                t_cur -= t_i;
                t_i *= self.t_mult;
            }
        }
        let frac = t_cur as f64 / t_i as f64;
        self.eta_min + 0.5 * (self.base_lr - self.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Scales gradients in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Matrix<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm().as_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_restarts() {
        let s = CosineWarmRestarts {
            base_lr: 1.0,
            eta_min: 0.0,
            t0: 4,
            t_mult: 1,
        };
        assert_eq!(s.lr_at(0), 1.0);
        assert!((s.lr_at(2) - 0.5).abs() < 1e-15);
        assert_eq!(s.lr_at(4), 1.0);
        let s = CosineWarmRestarts { t_mult: 2, ..s };
        assert_eq!(s.lr_at(4), 1.0);
        assert!((s.lr_at(8) - 0.5).abs() < 1e-15);
        assert_eq!(s.lr_at(12), 1.0);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![1.0f64, -1.0])];
        let g = vec![Matrix::from_vec(1, 2, vec![0.5, -3.0])];
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            eps: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[(1, 2)]);
        opt.step(&mut p, &g, 0.1);
        assert!((p[0].get(0, 0) - 0.9).abs() < 1e-12);
        assert!((p[0].get(0, 1) + 0.9).abs() < 1e-12);
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut p = vec![Matrix::from_vec(1, 1, vec![3.0f64])];
        let mut opt = AdamW::new(AdamWConfig::default(), &[(1, 1)]);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            opt.step(&mut p, &g, 0.01);
        }
        assert!(p[0].item().abs() < 1e-2);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Matrix::from_vec(1, 2, vec![3.0f64, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].sq_norm() - 1.0).abs() < 1e-12);
        let mut small = vec![Matrix::from_vec(1, 1, vec![0.5f64])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].item(), 0.5);
    }
}
