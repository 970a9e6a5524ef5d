//! Training timestep distributions: a base family pushed through the shift
//! map `m(t, σ) = σt / (1 + (σ − 1)t)`, which skews mass toward the noise end.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::real::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerFamily {
    /// `sigmoid(n)`, `n ~ N(0, 1)`.
    LogitNormal,
    /// `f(u) = 1 − u − s·(cos²(πu/2) − 1 + u)`, `u ~ U[0, 1]`; keeps
    /// positive density at both endpoints.
    Mode { scale: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub family: SamplerFamily,
    pub shift: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            family: SamplerFamily::Mode { scale: 0.8 },
            shift: 3.0,
        }
    }
}

impl SamplerSpec {
    pub fn new(family: SamplerFamily, shift: f64) -> Result<Self> {
        let s = Self { family, shift };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shift >= 1.0 && self.shift.is_finite()) {
            return Err(Error::invalid(format!("shift σ = {} must be finite and ≥ 1", self.shift)));
        }
        if let SamplerFamily::Mode { scale } = self.family {
            if !(0.0..=1.0).contains(&scale) {
                return Err(Error::invalid(format!("mode scale {scale} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn check_shift(sigma: f64) -> Result<()> {
    if sigma >= 1.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("shift σ = {sigma} must be finite and ≥ 1")))
    }
}

/// `m(t, σ) = σt / (1 + (σ − 1)t)`.
pub fn modulate(t: f64, sigma: f64) -> Result<f64> {
    check_shift(sigma)?;
    Ok(shift_map(t, sigma))
}

/// `m⁻¹(t′, σ) = t′ / (σ − (σ − 1)t′)`.
pub fn modulate_inverse(t: f64, sigma: f64) -> Result<f64> {
    check_shift(sigma)?;
    Ok(t / (sigma - (sigma - 1.0) * t))
}

#[inline]
fn shift_map(t: f64, sigma: f64) -> f64 {
    sigma * t / (1.0 + (sigma - 1.0) * t)
}

fn mode_map(u: f64, s: f64) -> f64 {
    let c = (PI * u / 2.0).cos();
    1.0 - u - s * (c * c - 1.0 + u)
}

fn mode_map_derivative(u: f64, s: f64) -> f64 {
    -1.0 - s * (1.0 - PI / 2.0 * (PI * u).sin())
}

/// One draw from `spec`.
pub fn sample_t<R: Rng + ?Sized>(spec: &SamplerSpec, rng: &mut R) -> f64 {
    let base = match spec.family {
        SamplerFamily::LogitNormal => {
            let n: f64 = rng.sample(StandardNormal);
            sigmoid(n)
        }
        SamplerFamily::Mode { scale } => mode_map(rng.random::<f64>(), scale),
        SamplerFamily::Uniform => rng.random::<f64>(),
    };
    shift_map(base, spec.shift)
}

/// Base-family density at `u ∈ (0, 1)`.
fn base_density(family: SamplerFamily, u: f64) -> f64 {
    match family {
        SamplerFamily::Uniform => 1.0,
        SamplerFamily::LogitNormal => {
            if u <= 0.0 || u >= 1.0 {
                return 0.0;
            }
            let l = (u / (1.0 - u)).ln();
            (-0.5 * l * l).exp() / (2.0 * PI).sqrt() / (u * (1.0 - u))
        }
        SamplerFamily::Mode { scale } => {
            // f is decreasing from f(0) = 1 to f(1) = 0; invert by bisection.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mode_map(mid, scale) > u {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            1.0 / mode_map_derivative(0.5 * (lo + hi), scale).abs()
        }
    }
}

/// Analytic density of `sample_t(spec)` at `t ∈ (0, 1)`.
pub fn density(spec: &SamplerSpec, t: f64) -> f64 {
    let s = spec.shift;
    let denom = s - (s - 1.0) * t;
    let u = t / denom;
    base_density(spec.family, u) * s / (denom * denom)
}
