//! AdamW with decoupled weight decay, global-norm clipping and a
//! warm-up plus cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_moments(config: AdamWConfig, m: Vec<f32>, v: Vec<f32>, t: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::shape("moment vectors differ in length"));
        }
        Ok(Self { config, m, v, t })
    }

    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)`.
    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("parameter, gradient and moment sizes differ"));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = c.beta1 * self.m[i] as f64 + (1.0 - c.beta1) * g;
            let v = c.beta2 * self.v[i] as f64 + (1.0 - c.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let p = params[i] as f64;
            let step = (m / bc1) / ((v / bc2).sqrt() + c.eps) + c.weight_decay * p;
            params[i] = (p - lr * step) as f32;
        }
        Ok(())
    }
}

/// Scales `grads` so its L2 norm is at most `max_norm` and returns the norm
/// before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Linear warm-up over `warmup` steps to `peak`, then cosine decay to
/// `min_ratio · peak` at `total`. `step` counts from 0.
pub fn learning_rate(step: u64, total: u64, warmup: u64, peak: f64, min_ratio: f64) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    let floor = min_ratio * peak;
    floor + (peak - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            3,
        );
        let mut p = vec![1.0f32, -2.0, 0.5];
        opt.update(&mut p, &[0.3, -4.0, 0.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn zero_lr_is_a_no_op_and_decay_is_decoupled() {
        let mut opt = AdamW::new(AdamWConfig::default(), 2);
        let mut p = vec![1.0f32, 3.0];
        opt.update(&mut p, &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, 3.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), 1);
        let mut q = vec![2.0f32];
        opt.update(&mut q, &[0.0], 0.5).unwrap();
        assert!((q[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-6);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f32, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-7 && (g[1] - 0.8).abs() < 1e-7);
        let mut h = vec![0.3f32, 0.4];
        clip_grad_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.3, 0.4]);
    }

    #[test]
    fn schedule_shape() {
        assert!((learning_rate(0, 100, 10, 1.0, 0.1) - 0.1).abs() < 1e-12);
        assert!((learning_rate(9, 100, 10, 1.0, 0.1) - 1.0).abs() < 1e-12);
        assert!((learning_rate(10, 100, 10, 1.0, 0.1) - 1.0).abs() < 1e-12);
        assert!((learning_rate(100, 100, 10, 1.0, 0.1) - 0.1).abs() < 1e-12);
        assert!((learning_rate(55, 100, 10, 1.0, 0.1) - 0.55).abs() < 1e-12);
        assert_eq!(learning_rate(0, 5, 0, 2.0, 0.1), 2.0);
    }
}
