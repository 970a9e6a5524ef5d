//! Rectified flow: the straight interpolation path, the velocity objective,
//! timestep samplers with shift modulation, inference schedules and Euler
//! generation with classifier-free guidance.
//!
//! Convention: `t = 0` is data and `t = 1` is noise,
//! `z_t = (1 − t)·z + t·ε`, and the network predicts `v = ε − z`.

mod generate;
mod sampler;
mod schedule;

pub use generate::{generate, generate_scene, GenerateOptions, OracleVelocity, VelocityModel};
pub use sampler::{density, modulate, modulate_inverse, sample_t, SamplerFamily, SamplerSpec};
pub use schedule::{Schedule, ScheduleKind, T_MAX};

use crate::real::Real;
use crate::{Error, Result};

/// `(1 − t)·z + t·ε`.
pub fn interpolate<F: Real>(z: &[F], eps: &[F], t: F) -> Result<Vec<F>> {
    if z.len() != eps.len() {
        return Err(Error::shape("z and ε differ in length"));
    }
    if !(t >= F::zero() && t <= F::one()) {
        return Err(Error::invalid(format!("timestep {t} outside [0, 1]")));
    }
    Ok(z.iter().zip(eps).map(|(&a, &b)| (F::one() - t) * a + t * b).collect())
}

/// `ε − z`, the time derivative of the interpolant.
pub fn velocity_target<F: Real>(z: &[F], eps: &[F]) -> Result<Vec<F>> {
    if z.len() != eps.len() {
        return Err(Error::shape("z and ε differ in length"));
    }
    Ok(z.iter().zip(eps).map(|(&a, &b)| b - a).collect())
}

/// Mean squared error over the tokens selected by `mask` (each token is
/// `width` values wide) and its gradient with respect to `pred`.
pub fn masked_velocity_loss<F: Real>(pred: &[F], target: &[F], mask: &[bool], width: usize) -> Result<(f64, Vec<F>)> {
    if pred.len() != target.len() || pred.len() != mask.len() * width {
        return Err(Error::shape("prediction, target and mask sizes disagree"));
    }
    let count = mask.iter().filter(|&&m| m).count() * width;
    if count == 0 {
        return Err(Error::EmptyTargets);
    }
    let mut sum = 0.0f64;
    let mut grad = vec![F::zero(); pred.len()];
    let g = F::of(2.0 / count as f64);
    for (tok, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for i in tok * width..(tok + 1) * width {
            let e = pred[i] - target[i];
            sum += e.as_f64() * e.as_f64();
            grad[i] = g * e;
        }
    }
    Ok((sum / count as f64, grad))
}

/// Flow loss of a velocity prediction against clean `z` and noise `ε`.
pub fn loss<F: Real>(pred_v: &[F], z: &[F], eps: &[F], mask: &[bool], width: usize) -> Result<f64> {
    let v = velocity_target(z, eps)?;
    masked_velocity_loss(pred_v, &v, mask, width).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_examples() {
        let z = [0.3f64, -0.2];
        let e = [1.0, 2.0];
        assert_eq!(interpolate(&z, &e, 0.0).unwrap(), z.to_vec());
        assert_eq!(interpolate(&z, &e, 1.0).unwrap(), e.to_vec());
        assert_eq!(interpolate(&[0.0f64], &[2.0], 0.25).unwrap(), vec![0.5]);
        assert!(interpolate(&z, &e, 1.5).is_err());
        assert!(interpolate(&z, &e, -0.1).is_err());
    }

    #[test]
    fn velocity_is_the_path_derivative() {
        let z = [0.3f64, -0.2, 0.9];
        let e = [1.0, 2.0, -0.5];
        let v = velocity_target(&z, &e).unwrap();
        assert_eq!(velocity_target(&z, &z).unwrap(), vec![0.0; 3]);
        assert_eq!(velocity_target(&[0.0; 3], &e).unwrap(), e.to_vec());
        let (t, h) = (0.4, 0.125);
        let a = interpolate(&z, &e, t).unwrap();
        let b = interpolate(&z, &e, t + h).unwrap();
        for i in 0..3 {
            assert!(((b[i] - a[i]) / h - v[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_examples() {
        let z = vec![0.5f64; 8];
        let e = vec![-1.0; 8];
        let v = velocity_target(&z, &e).unwrap();
        let mask = [true, false, true, false];
        assert_eq!(loss(&v, &z, &e, &mask, 2).unwrap(), 0.0);
        let shifted: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
        assert_eq!(loss(&shifted, &z, &e, &mask, 2).unwrap(), 1.0);
        // garbage on unmasked tokens changes nothing
        let mut garbage = v.clone();
        garbage[2] = 100.0;
        garbage[7] = -5.0;
        assert_eq!(loss(&garbage, &z, &e, &mask, 2).unwrap(), 0.0);
        let (_, grad) = masked_velocity_loss(&garbage, &v, &mask, 2).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!(loss(&v, &z, &e, &[false; 4], 2).is_err());
    }
}
