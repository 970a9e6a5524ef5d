//! Token-wise layers: modulated layer norm, SwiGLU, timestep features.

use crate::real::{matmul_nn, matmul_nt, matmul_tn, silu, silu_grad, Real};

pub const LN_EPS: f64 = 1e-6;

/// Affine-free layer norm over rows of width `cols`.
pub fn layer_norm<F: Real>(x: &[F], cols: usize, xhat: &mut [F], rstd: &mut [F]) {
    let inv_n = F::one() / F::of(cols as f64);
    let eps = F::of(LN_EPS);
    for ((row, out), r) in x.chunks_exact(cols).zip(xhat.chunks_exact_mut(cols)).zip(rstd.iter_mut()) {
        let mean = row.iter().copied().sum::<F>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
        let rs = F::one() / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        *r = rs;
    }
}

/// `dx += LNᵀ(dxhat)`.
pub fn layer_norm_backward<F: Real>(dxhat: &[F], xhat: &[F], rstd: &[F], cols: usize, dx: &mut [F]) {
    let inv_n = F::one() / F::of(cols as f64);
    for (((g, xh), rs), out) in dxhat
        .chunks_exact(cols)
        .zip(xhat.chunks_exact(cols))
        .zip(rstd)
        .zip(dx.chunks_exact_mut(cols))
    {
        let mg = g.iter().copied().sum::<F>() * inv_n;
        let mgx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() * inv_n;
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            *o += *rs * (gi - mg - xi * mgx);
        }
    }
}

/// `u = xhat ⊙ (1 + scale) + shift`, broadcasting the per-scene vectors.
pub fn modulate<F: Real>(xhat: &[F], shift: &[F], scale: &[F], u: &mut [F]) {
    let cols = shift.len();
    for (row, out) in xhat.chunks_exact(cols).zip(u.chunks_exact_mut(cols)) {
        for c in 0..cols {
            out[c] = row[c] * (F::one() + scale[c]) + shift[c];
        }
    }
}

/// Reverse of [`modulate`]: writes `dxhat`, accumulates `dshift`/`dscale`.
pub fn modulate_backward<F: Real>(
    du: &[F],
    xhat: &[F],
    scale: &[F],
    dxhat: &mut [F],
    dshift: &mut [F],
    dscale: &mut [F],
) {
    let cols = scale.len();
    for ((g, xh), out) in du.chunks_exact(cols).zip(xhat.chunks_exact(cols)).zip(dxhat.chunks_exact_mut(cols)) {
        for c in 0..cols {
            dshift[c] += g[c];
            dscale[c] += g[c] * xh[c];
            out[c] = g[c] * (F::one() + scale[c]);
        }
    }
}

/// Activations kept for the SwiGLU reverse pass.
#[derive(Debug, Clone, Default)]
pub struct SwigluCache<F> {
    pub gate: Vec<F>,
    pub up: Vec<F>,
    pub act: Vec<F>,
}

/// `W_down (silu(W_gate x) ⊙ W_up x)` over `rows` tokens.
pub fn swiglu_forward<F: Real>(
    x: &[F],
    rows: usize,
    dim: usize,
    hidden: usize,
    w_gate: &[F],
    w_up: &[F],
    w_down: &[F],
    out: &mut [F],
) -> SwigluCache<F> {
    let mut gate = vec![F::zero(); rows * hidden];
    let mut up = vec![F::zero(); rows * hidden];
    matmul_nt(x, w_gate, &mut gate, rows, dim, hidden, false);
    matmul_nt(x, w_up, &mut up, rows, dim, hidden, false);
    let act: Vec<F> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
    matmul_nt(&act, w_down, out, rows, hidden, dim, false);
    SwigluCache { gate, up, act }
}

/// Reverse of [`swiglu_forward`]; accumulates weight gradients, writes `dx`.
#[allow(clippy::too_many_arguments)]
pub fn swiglu_backward<F: Real>(
    dout: &[F],
    x: &[F],
    cache: &SwigluCache<F>,
    rows: usize,
    dim: usize,
    hidden: usize,
    w_gate: &[F],
    w_up: &[F],
    w_down: &[F],
    g_gate: &mut [F],
    g_up: &mut [F],
    g_down: &mut [F],
    dx: &mut [F],
) {
    matmul_tn(dout, &cache.act, g_down, rows, dim, hidden, true);
    let mut dact = vec![F::zero(); rows * hidden];
    matmul_nn(dout, w_down, &mut dact, rows, dim, hidden, false);
    let mut dgate = vec![F::zero(); rows * hidden];
    let mut dup = vec![F::zero(); rows * hidden];
    for i in 0..rows * hidden {
        let g = cache.gate[i];
        dup[i] = dact[i] * silu(g);
        dgate[i] = dact[i] * cache.up[i] * silu_grad(g);
    }
    matmul_tn(&dgate, x, g_gate, rows, hidden, dim, true);
    matmul_tn(&dup, x, g_up, rows, hidden, dim, true);
    matmul_nn(&dgate, w_gate, dx, rows, hidden, dim, false);
    matmul_nn(&dup, w_up, dx, rows, hidden, dim, true);
}

/// Sinusoidal features `[cos(1000·t·f_k), sin(1000·t·f_k)]` with
/// `f_k = 10000^(−k/half)`.
pub fn timestep_features<F: Real>(t: F, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let arg = 1000.0 * t.as_f64() * freq;
        out[k] = F::of(arg.cos());
        out[half + k] = F::of(arg.sin());
    }
    out
}
