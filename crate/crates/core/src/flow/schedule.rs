//! Inference timestep grids `t_0 > t_1 > … > t_n = 0`.

use crate::{Error, Result};

/// Start of every built-in grid; avoids evaluating the network on pure noise.
pub const T_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Uniform spacing from `t_max` to 0.
    Linspace,
    /// Uniform over the index range `[980, 0]` of a 1000-step grid, skipping
    /// the region right next to pure noise.
    Trailing,
    /// `⌈n/2⌉` small equal steps from `t_max`, then quadratic spacing to 0.
    LinearQuadratic,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "linspace" | "linear" => Ok(Self::Linspace),
            "trailing" => Ok(Self::Trailing),
            "linearquadratic" | "lq" => Ok(Self::LinearQuadratic),
            _ => Err(Error::invalid(format!("unknown schedule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub grid: Vec<f64>,
}

/// Threshold noise level reached by the linear part (as a fraction of `t_max`).
const LQ_THRESHOLD: f64 = 0.025;

impl Schedule {
    pub fn build(kind: ScheduleKind, steps: usize) -> Result<Self> {
        Self::build_with_tmax(kind, steps, T_MAX)
    }

    pub fn build_with_tmax(kind: ScheduleKind, n: usize, t_max: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("schedule needs at least 2 steps, got {n}")));
        }
        if !(t_max > 0.0 && t_max <= 1.0) {
            return Err(Error::invalid(format!("t_max {t_max} outside (0, 1]")));
        }
        let grid = match kind {
            ScheduleKind::Linspace => (0..=n).map(|i| t_max * (1.0 - i as f64 / n as f64)).collect(),
            ScheduleKind::Trailing => {
                if n > 980 {
                    return Err(Error::invalid("trailing grid supports at most 980 steps"));
                }
                (0..=n)
                    .map(|i| (980.0 * (1.0 - i as f64 / n as f64)).round() / 1000.0)
                    .collect()
            }
            ScheduleKind::LinearQuadratic => {
                let lin = n.div_ceil(2);
                let quad = n - lin;
                let (l, q, nf) = (lin as f64, quad as f64, n as f64);
                let gap = l - LQ_THRESHOLD * nf;
                let qc = gap / (l * q * q);
                let lc = LQ_THRESHOLD / l - 2.0 * gap / (q * q);
                let c = qc * l * l;
                let mut sigma: Vec<f64> = (0..lin).map(|i| i as f64 * LQ_THRESHOLD / l).collect();
                sigma.extend((lin..n).map(|i| {
                    let i = i as f64;
                    qc * i * i + lc * i + c
                }));
                sigma.push(1.0);
                sigma.into_iter().map(|s| t_max * (1.0 - s)).collect()
            }
        };
        Self::from_grid(grid)
    }

    /// Validates an explicit grid (any step count ≥ 1).
    pub fn from_grid(grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::invalid("grid needs a start and an end"));
        }
        if grid[0] > 1.0 || *grid.last().expect("non-empty") != 0.0 {
            return Err(Error::invalid("grid must start at most at 1 and end at 0"));
        }
        if grid.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::invalid("grid must be strictly decreasing"));
        }
        Ok(Self { grid })
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }
}
