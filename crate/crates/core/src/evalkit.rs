//! Image metrics, the activation-magnitude probe and throughput measurement.
//!
//! Images are compared after mapping `[−1, 1]` to `[0, 1]`.
//!
//! SSIM uses 8×8 uniform windows at stride 1 (clipped to the image when it
//! is smaller), population statistics, `C1 = (0.01)²`, `C2 = (0.03)²` for a
//! unit dynamic range, and averages over windows and channels.

use std::fmt::Write as _;
use std::time::Duration;

use crate::image::Image;
use crate::net::{embed_tokens, forward, ModelParams, SceneInputs};
use crate::real::Real;
use crate::{Error, Result};

/// Reported PSNR of identical images, and the ceiling of every PSNR.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if !a.same_shape(b) || a.data.len() != b.data.len() {
        return Err(Error::shape(format!(
            "images are {}×{}×{} and {}×{}×{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if a.data.is_empty() {
        return Err(Error::shape("empty images"));
    }
    Ok(())
}

#[inline]
fn unit<T: Real>(x: T) -> f64 {
    (x.as_f64() + 1.0) * 0.5
}

/// `10·log10(1/mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

/// Mean squared error of two `[−1, 1]` images measured in `[0, 1]`.
pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_same(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (unit(x) - unit(y)).powi(2)).sum();
    Ok(s / a.data.len() as f64)
}

pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_same(a, b)?;
    let (h, w, c) = (a.height, a.width, a.channels);
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y0 in 0..=h - wh {
            for x0 in 0..=w - ww {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        let (p, q) = (unit(a.at(y, x, ch)), unit(b.at(y, x, ch)));
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Magnitude statistics of one layer's hidden state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerStats {
    pub top1: f64,
    /// Top 0.001 % (the 99.999th nearest-rank percentile of `|h|`).
    pub q999: f64,
    /// Top 0.01 %.
    pub q99: f64,
    /// Top 0.1 %.
    pub q9: f64,
}

/// Nearest-rank quantile of an ascending slice: the value at rank
/// `⌈p·n⌉` (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

impl LayerStats {
    pub fn of<F: Real>(values: &[F]) -> Self {
        let mut mags: Vec<f64> = values.iter().map(|v| v.as_f64().abs()).collect();
        if mags.is_empty() {
            return Self {
                top1: 0.0,
                q999: 0.0,
                q99: 0.0,
                q9: 0.0,
            };
        }
        mags.sort_by(f64::total_cmp);
        Self {
            top1: *mags.last().expect("non-empty"),
            q999: nearest_rank(&mags, 1.0 - 1e-5),
            q99: nearest_rank(&mags, 1.0 - 1e-4),
            q9: nearest_rank(&mags, 1.0 - 1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    pub layers: Vec<LayerStats>,
}

pub const PROBE_CSV_HEADER: &str = "layer,top1,q999,q99,q9";

impl ActivationStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(PROBE_CSV_HEADER);
        s.push('\n');
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(s, "{i},{},{},{},{}", l.top1, l.q999, l.q99, l.q9).expect("writing to a String");
        }
        s
    }

    /// Merges per-scene statistics by taking the element-wise maximum.
    pub fn max_merge(&mut self, other: &ActivationStats) {
        if self.layers.is_empty() {
            self.layers = other.layers.clone();
            return;
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.top1 = a.top1.max(b.top1);
            a.q999 = a.q999.max(b.q999);
            a.q99 = a.q99.max(b.q99);
            a.q9 = a.q9.max(b.q9);
        }
    }
}

/// Magnitude statistics of the hidden state after every layer (post
/// residual, before the next norm).
pub fn probe_activations<F: Real>(params: &ModelParams<F>, inputs: &SceneInputs<F>, t: F) -> Result<ActivationStats> {
    let mut taps = Vec::with_capacity(params.config.layers);
    forward(params, inputs, t, Some(&mut taps))?;
    Ok(ActivationStats {
        layers: taps.iter().map(|h| LayerStats::of(h)).collect(),
    })
}

/// The statistics every layer reports while the network is the identity.
pub fn embedding_stats<F: Real>(params: &ModelParams<F>, inputs: &SceneInputs<F>) -> Result<LayerStats> {
    Ok(LayerStats::of(&embed_tokens(params, inputs)?))
}

/// Samples per second over a window.
pub fn throughput(samples: usize, elapsed: Duration) -> Result<f64> {
    if samples == 0 || elapsed.is_zero() {
        return Err(Error::invalid("throughput window is empty"));
    }
    Ok(samples as f64 / elapsed.as_secs_f64())
}

/// Running throughput that ignores the first `warmup` recorded steps.
#[derive(Debug, Clone, Default)]
pub struct ThroughputMeter {
    pub warmup: usize,
    seen: usize,
    samples: usize,
    elapsed: Duration,
}

impl ThroughputMeter {
    pub fn new(warmup: usize) -> Self {
        Self {
            warmup,
            ..Self::default()
        }
    }

    pub fn record(&mut self, samples: usize, elapsed: Duration) {
        self.seen += 1;
        if self.seen > self.warmup {
            self.samples += samples;
            self.elapsed += elapsed;
        }
    }

    pub fn rate(&self) -> Result<f64> {
        throughput(self.samples, self.elapsed)
    }

    /// Starts a new window, keeping the warm-up state.
    pub fn reset_window(&mut self) {
        self.samples = 0;
        self.elapsed = Duration::ZERO;
    }
}
