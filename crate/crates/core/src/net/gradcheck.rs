//! Central finite-difference validation of the hand-written reverse pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{backward, forward};
use super::{ModelParams, SceneInputs};
use crate::flow::masked_velocity_loss;
use crate::Result;

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between `analytic[i]` and the central difference
/// `(f(x + h e_i) − f(x − h e_i)) / 2h` over `indices`.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    floor: f64,
) -> f64 {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &i in indices {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric, floor));
    }
    worst
}

/// Report of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub loss: f64,
    pub checked: usize,
}

/// Flow-loss gradient of the full network versus central differences on
/// `samples` randomly chosen parameters (plus every parameter tensor's
/// first entry, so no tensor goes untested).
pub fn grad_check(
    params: &ModelParams<f64>,
    inputs: &SceneInputs<f64>,
    t: f64,
    target_velocity: &[f64],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let cfg = &params.config;
    let mask = token_mask(inputs, cfg.tokens_per_view());
    let pd = cfg.patch_dim();
    let (out, cache) = forward(params, inputs, t, None)?;
    let (loss, dout) = masked_velocity_loss(&out, target_velocity, &mask, pd)?;
    let mut grads = vec![0.0; params.len()];
    backward(params, inputs, &cache, &dout, &mut grads)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = sample(&mut rng, params.len(), samples.min(params.len())).into_vec();
    indices.extend(params.layout.entries.iter().filter(|e| !e.slot.is_empty()).map(|e| e.slot.offset));
    indices.sort_unstable();
    indices.dedup();

    let mut probe = params.clone();
    let f = |x: &[f64]| {
        probe.data.copy_from_slice(x);
        let out = forward(&probe, inputs, t, None).expect("forward succeeded once").0;
        masked_velocity_loss(&out, target_velocity, &mask, pd).expect("shapes unchanged").0
    };
    let err = check_gradient(f, &params.data, &grads, &indices, h, 1e-6);
    Ok(GradCheckReport {
        max_relative_error: err,
        loss,
        checked: indices.len(),
    })
}

/// Per-token loss mask: visible target views.
pub fn token_mask<F: crate::Real>(inputs: &SceneInputs<F>, tokens_per_view: usize) -> Vec<bool> {
    let targets = inputs.target_views();
    let mut mask = vec![false; inputs.views * tokens_per_view];
    for v in targets {
        mask[v * tokens_per_view..(v + 1) * tokens_per_view].fill(true);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let a: Vec<f64> = (0..20).map(|i| 2.0 + (i as f64 * 0.37).sin()).collect();
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1 - 1.0).collect();
        let f = |x: &[f64]| x.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
        let err = check_gradient(f, &x, &a, &(0..20).collect::<Vec<_>>(), 1e-5, 1e-6);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = vec![1.0, 2.0];
        let f = |x: &[f64]| x[0] * x[0] + x[1];
        assert!(check_gradient(f, &x, &[2.0, 1.0], &[0, 1], 1e-5, 1e-6) < 1e-8);
        assert!(check_gradient(f, &x, &[2.0, 1.5], &[0, 1], 1e-5, 1e-6) > 0.1);
    }
}
