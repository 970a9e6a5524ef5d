//! Encoded multi-head attention with grouped key/value heads and registers.
//!
//! Two token neighbourhoods share one implementation:
//!
//! - **spatial**: each view attends over its own `gh·gw` tokens;
//! - **temporal window**: a query at `(view, i, j)` attends to every visible
//!   view's tokens inside the `K×K` window around `(i, j)`, clipped at grid
//!   edges. Rows covered are `i − ⌊(K−1)/2⌋ ..= i + ⌊K/2⌋`, likewise columns.
//!
//! Queries are mapped by `ρ(g)⁻ᵀ`, keys and values by `ρ(g)`, and the
//! aggregated value by `ρ(g)⁻¹` (see [`crate::encoding`]). Register
//! keys/values are appended to every key set; they are scored against the
//! untransformed query and their values join after the output transform,
//! so registers carry no position and the relative-transform property is
//! kept intact.

use crate::encoding::{rep_matrix, Apply, LayoutKind, RepLayout, RepMatrix};
use crate::net::{ModelConfig, Role, ViewAttr};
use crate::real::{dot, gemm, matmul_nn, matmul_nt, matmul_tn, MatMut, MatRef, Real};
use crate::Result;

/// Per-token encoding matrices. Token `t` uses `reps[t % period]`.
#[derive(Debug, Clone)]
pub struct TokenReps<F> {
    reps: Vec<RepMatrix<F>>,
    period: usize,
}

impl<F: Real> TokenReps<F> {
    /// Patch-angle encoding, identical for every view.
    pub fn spatial(cfg: &ModelConfig) -> Result<Self> {
        let layout = RepLayout::new(cfg.head_dim(), LayoutKind::Spatial, cfg.grid_h, cfg.grid_w)?;
        let any = ViewAttr::Frame { index: 0, count: 1 };
        let mut reps = Vec::with_capacity(cfg.tokens_per_view());
        for i in 0..cfg.grid_h {
            for j in 0..cfg.grid_w {
                reps.push(rep_matrix(&any.token_attr(i, j, cfg.grid_h, cfg.grid_w)?, &layout)?.cast());
            }
        }
        Ok(Self {
            period: reps.len(),
            reps,
        })
    }

    /// Patch angles plus the frame angle or camera pose of each view.
    pub fn temporal(cfg: &ModelConfig, attrs: &[ViewAttr]) -> Result<Self> {
        let layout = RepLayout::new(cfg.head_dim(), LayoutKind::TemporalOr3D, cfg.grid_h, cfg.grid_w)?;
        let mut reps = Vec::with_capacity(attrs.len() * cfg.tokens_per_view());
        for a in attrs {
            for i in 0..cfg.grid_h {
                for j in 0..cfg.grid_w {
                    reps.push(rep_matrix(&a.token_attr(i, j, cfg.grid_h, cfg.grid_w)?, &layout)?.cast());
                }
            }
        }
        Ok(Self {
            period: reps.len().max(1),
            reps,
        })
    }

    #[inline]
    pub fn get(&self, token: usize) -> &RepMatrix<F> {
        &self.reps[token % self.period]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnKind {
    Spatial,
    Temporal { window: usize },
}

/// Everything about a scene that attention needs besides the weights.
#[derive(Debug, Clone, Copy)]
pub struct AttnContext<'a, F> {
    pub kind: AttnKind,
    pub views: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub hidden_dim: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub registers: usize,
    pub value_transform: bool,
    pub reps: &'a TokenReps<F>,
    pub roles: &'a [Role],
    pub hidden: &'a [bool],
}

impl<F> AttnContext<'_, F> {
    fn tokens_per_view(&self) -> usize {
        self.grid_h * self.grid_w
    }

    fn tokens(&self) -> usize {
        self.views * self.tokens_per_view()
    }

    fn group(&self) -> usize {
        self.q_heads / self.kv_heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }

    fn may_attend(&self, q: usize, k: usize) -> bool {
        !self.hidden[k] && (self.roles[q] == Role::Target || self.roles[k] == Role::Reference)
    }
}

/// Window row (or column) range `[lo, hi)` around `i` on an axis of length `n`.
pub fn window_range(i: usize, k: usize, n: usize) -> (usize, usize) {
    let lo = i.saturating_sub((k - 1) / 2);
    let hi = (i + k / 2 + 1).min(n);
    (lo, hi)
}

/// Key tokens of temporal query `token`, in view-major order. Empty for
/// hidden query views.
pub fn temporal_keys<F>(ctx: &AttnContext<'_, F>, token: usize) -> Vec<usize> {
    let mut out = Vec::new();
    push_temporal_keys(ctx, token, &mut out);
    out
}

fn push_temporal_keys<F>(ctx: &AttnContext<'_, F>, token: usize, out: &mut Vec<usize>) {
    let AttnKind::Temporal { window } = ctx.kind else {
        panic!("temporal keys requested for a spatial block");
    };
    let s = ctx.tokens_per_view();
    let (qv, pos) = (token / s, token % s);
    if ctx.hidden[qv] {
        return;
    }
    let (i, j) = (pos / ctx.grid_w, pos % ctx.grid_w);
    let (r0, r1) = window_range(i, window, ctx.grid_h);
    let (c0, c1) = window_range(j, window, ctx.grid_w);
    for kv in 0..ctx.views {
        if !ctx.may_attend(qv, kv) {
            continue;
        }
        for r in r0..r1 {
            for c in c0..c1 {
                out.push(kv * s + r * ctx.grid_w + c);
            }
        }
    }
}

/// Borrowed weights of one attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeights<'a, F> {
    pub wq: &'a [F],
    pub wk: &'a [F],
    pub wv: &'a [F],
    pub wo: &'a [F],
    pub reg_k: &'a [F],
    pub reg_v: &'a [F],
}

/// Gradient accumulators matching [`AttnWeights`].
#[derive(Debug)]
pub struct AttnGrads<'a, F> {
    pub wq: &'a mut [F],
    pub wk: &'a mut [F],
    pub wv: &'a mut [F],
    pub wo: &'a mut [F],
    pub reg_k: &'a mut [F],
    pub reg_v: &'a mut [F],
}

#[derive(Debug, Clone, Default)]
pub struct AttnCache<F> {
    /// Queries before the encoding, `[T, Hq·d]`.
    q_raw: Vec<F>,
    /// Encoded queries, keys and values.
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// Attention probabilities (layout depends on the kind).
    probs: Vec<F>,
    /// Temporal only: key lists and per-token offsets into `keys` / `probs`.
    keys: Vec<u32>,
    key_off: Vec<usize>,
    prob_off: Vec<usize>,
    /// Per-head outputs before the output projection, `[T, Hq·d]`.
    o: Vec<F>,
}

impl<F> AttnCache<F> {
    /// Number of keys (registers included) each query token scored against.
    pub fn key_counts(&self, registers: usize) -> Vec<usize> {
        self.key_off.windows(2).map(|w| w[1] - w[0] + registers).collect()
    }
}

fn softmax_row<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    let inv = F::one() / z;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

fn encode_inputs<F: Real>(ctx: &AttnContext<'_, F>, q: &mut [F], k: &mut [F], v: &mut [F]) {
    let d = ctx.head_dim;
    for t in 0..ctx.tokens() {
        let rep = ctx.reps.get(t);
        for h in 0..ctx.q_heads {
            let off = (t * ctx.q_heads + h) * d;
            rep.apply(Apply::InverseTranspose, &mut q[off..off + d]);
        }
        for g in 0..ctx.kv_heads {
            let off = (t * ctx.kv_heads + g) * d;
            rep.apply(Apply::Forward, &mut k[off..off + d]);
            if ctx.value_transform {
                rep.apply(Apply::Forward, &mut v[off..off + d]);
            }
        }
    }
}

/// `y = Attn(u) · W_oᵀ` for `u` of shape `[T, D]`.
pub fn attention_forward<F: Real>(ctx: &AttnContext<'_, F>, w: &AttnWeights<'_, F>, u: &[F]) -> (Vec<F>, AttnCache<F>) {
    let (t, dm, d) = (ctx.tokens(), ctx.hidden_dim, ctx.head_dim);
    let (qd, kvd) = (ctx.q_heads * d, ctx.kv_heads * d);
    let mut q_raw = vec![F::zero(); t * qd];
    let mut k = vec![F::zero(); t * kvd];
    let mut v = vec![F::zero(); t * kvd];
    matmul_nt(u, w.wq, &mut q_raw, t, dm, qd, false);
    matmul_nt(u, w.wk, &mut k, t, dm, kvd, false);
    matmul_nt(u, w.wv, &mut v, t, dm, kvd, false);
    let mut q = q_raw.clone();
    encode_inputs(ctx, &mut q, &mut k, &mut v);
    let mut cache = AttnCache {
        q_raw,
        q,
        k,
        v,
        o: vec![F::zero(); t * qd],
        ..Default::default()
    };
    match ctx.kind {
        AttnKind::Spatial => spatial_core(ctx, w, &mut cache),
        AttnKind::Temporal { .. } => temporal_core(ctx, w, &mut cache),
    }
    let mut y = vec![F::zero(); t * dm];
    matmul_nt(&cache.o, w.wo, &mut y, t, qd, dm, false);
    (y, cache)
}

/// Maps the aggregated value of `(token, head)` back to the token's frame
/// and adds the register values.
fn finish_output<F: Real>(ctx: &AttnContext<'_, F>, reg_v: &[F], token: usize, h: usize, reg_p: &[F], o: &mut [F]) {
    if ctx.value_transform {
        ctx.reps.get(token).apply(Apply::Inverse, o);
    }
    let (d, kvd) = (ctx.head_dim, ctx.kv_heads * ctx.head_dim);
    let g = h / ctx.group();
    for (r, &p) in reg_p.iter().enumerate() {
        let rv = &reg_v[r * kvd + g * d..r * kvd + (g + 1) * d];
        for (x, &y) in o.iter_mut().zip(rv) {
            *x += p * y;
        }
    }
}

fn spatial_core<F: Real>(ctx: &AttnContext<'_, F>, w: &AttnWeights<'_, F>, c: &mut AttnCache<F>) {
    let s = ctx.tokens_per_view();
    let (d, r) = (ctx.head_dim, ctx.registers);
    let (qd, kvd) = (ctx.q_heads * d, ctx.kv_heads * d);
    let row = s + r;
    let scale = F::of(ctx.scale());
    c.probs = vec![F::zero(); ctx.views * ctx.q_heads * s * row];
    for view in 0..ctx.views {
        if ctx.hidden[view] {
            continue;
        }
        let base = view * s;
        for h in 0..ctx.q_heads {
            let g = h / ctx.group();
            let p_off = (view * ctx.q_heads + h) * s * row;
            let p = &mut c.probs[p_off..p_off + s * row];
            let qh = MatRef::strided(&c.q[base * qd + h * d..], s, d, qd);
            let kg = MatRef::strided(&c.k[base * kvd + g * d..], s, d, kvd);
            gemm(scale, qh, kg.t(), F::zero(), MatMut::strided(p, s, s, row));
            for i in 0..s {
                let qr = &c.q_raw[(base + i) * qd + h * d..(base + i) * qd + (h + 1) * d];
                for rr in 0..r {
                    p[i * row + s + rr] = scale * dot(qr, &w.reg_k[rr * kvd + g * d..rr * kvd + (g + 1) * d]);
                }
                softmax_row(&mut p[i * row..(i + 1) * row]);
            }
            let vg = MatRef::strided(&c.v[base * kvd + g * d..], s, d, kvd);
            gemm(
                F::one(),
                MatRef::strided(p, s, s, row),
                vg,
                F::zero(),
                MatMut::strided(&mut c.o[base * qd + h * d..], s, d, qd),
            );
            for i in 0..s {
                let o = &mut c.o[(base + i) * qd + h * d..(base + i) * qd + (h + 1) * d];
                finish_output(ctx, w.reg_v, base + i, h, &p[i * row + s..(i + 1) * row], o);
            }
        }
    }
}

fn temporal_core<F: Real>(ctx: &AttnContext<'_, F>, w: &AttnWeights<'_, F>, c: &mut AttnCache<F>) {
    let t = ctx.tokens();
    let (d, r, hq) = (ctx.head_dim, ctx.registers, ctx.q_heads);
    let (qd, kvd) = (hq * d, ctx.kv_heads * d);
    let scale = F::of(ctx.scale());
    let mut keys = Vec::new();
    let mut key_off = Vec::with_capacity(t + 1);
    let mut prob_off = Vec::with_capacity(t + 1);
    let mut scratch = Vec::new();
    key_off.push(0);
    prob_off.push(0);
    for tok in 0..t {
        scratch.clear();
        push_temporal_keys(ctx, tok, &mut scratch);
        keys.extend(scratch.iter().map(|&k| k as u32));
        key_off.push(keys.len());
        let n = if ctx.hidden[tok / ctx.tokens_per_view()] { 0 } else { (scratch.len() + r) * hq };
        prob_off.push(prob_off[tok] + n);
    }
    let mut probs = vec![F::zero(); prob_off[t]];
    for tok in 0..t {
        let ks = &keys[key_off[tok]..key_off[tok + 1]];
        let n = ks.len() + r;
        if prob_off[tok + 1] == prob_off[tok] {
            continue;
        }
        for h in 0..hq {
            let g = h / ctx.group();
            let p = &mut probs[prob_off[tok] + h * n..prob_off[tok] + (h + 1) * n];
            let qt = &c.q[tok * qd + h * d..tok * qd + (h + 1) * d];
            for (pj, &kt) in p.iter_mut().zip(ks) {
                let kt = kt as usize;
                *pj = scale * dot(qt, &c.k[kt * kvd + g * d..kt * kvd + (g + 1) * d]);
            }
            let qr = &c.q_raw[tok * qd + h * d..tok * qd + (h + 1) * d];
            for rr in 0..r {
                p[ks.len() + rr] = scale * dot(qr, &w.reg_k[rr * kvd + g * d..rr * kvd + (g + 1) * d]);
            }
            softmax_row(p);
            let o = &mut c.o[tok * qd + h * d..tok * qd + (h + 1) * d];
            for (&pj, &kt) in p.iter().zip(ks) {
                let kt = kt as usize;
                let vj = &c.v[kt * kvd + g * d..kt * kvd + (g + 1) * d];
                for (x, &y) in o.iter_mut().zip(vj) {
                    *x += pj * y;
                }
            }
            finish_output(ctx, w.reg_v, tok, h, &p[ks.len()..], o);
        }
    }
    c.keys = keys;
    c.key_off = key_off;
    c.prob_off = prob_off;
    c.probs = probs;
}

/// Reverse of [`attention_forward`]: accumulates weight gradients into `g`
/// and `du` (shape `[T, D]`).
pub fn attention_backward<F: Real>(
    ctx: &AttnContext<'_, F>,
    w: &AttnWeights<'_, F>,
    u: &[F],
    cache: &AttnCache<F>,
    dy: &[F],
    g: &mut AttnGrads<'_, F>,
    du: &mut [F],
) {
    let (t, dm, d) = (ctx.tokens(), ctx.hidden_dim, ctx.head_dim);
    let (qd, kvd) = (ctx.q_heads * d, ctx.kv_heads * d);
    matmul_tn(dy, &cache.o, g.wo, t, dm, qd, true);
    let mut d_o = vec![F::zero(); t * qd];
    matmul_nn(dy, w.wo, &mut d_o, t, dm, qd, false);

    // Gradient of the aggregated value before the output transform.
    let mut d_agg = d_o.clone();
    if ctx.value_transform {
        for tok in 0..t {
            let rep = ctx.reps.get(tok);
            for h in 0..ctx.q_heads {
                rep.apply(Apply::InverseTranspose, &mut d_agg[(tok * ctx.q_heads + h) * d..][..d]);
            }
        }
    }

    let mut dq = vec![F::zero(); t * qd];
    let mut dq_raw = vec![F::zero(); t * qd];
    let mut dk = vec![F::zero(); t * kvd];
    let mut dv = vec![F::zero(); t * kvd];
    let mut grads = CoreGrads {
        dq: &mut dq,
        dq_raw: &mut dq_raw,
        dk: &mut dk,
        dv: &mut dv,
        reg_k: g.reg_k,
        reg_v: g.reg_v,
    };
    match ctx.kind {
        AttnKind::Spatial => spatial_core_backward(ctx, w, cache, &d_o, &d_agg, &mut grads),
        AttnKind::Temporal { .. } => temporal_core_backward(ctx, w, cache, &d_o, &d_agg, &mut grads),
    }

    for tok in 0..t {
        let rep = ctx.reps.get(tok);
        for h in 0..ctx.q_heads {
            let off = (tok * ctx.q_heads + h) * d;
            rep.apply(Apply::Inverse, &mut dq[off..off + d]);
        }
        for gi in 0..ctx.kv_heads {
            let off = (tok * ctx.kv_heads + gi) * d;
            rep.apply(Apply::Transpose, &mut dk[off..off + d]);
            if ctx.value_transform {
                rep.apply(Apply::Transpose, &mut dv[off..off + d]);
            }
        }
    }
    for (a, b) in dq.iter_mut().zip(&dq_raw) {
        *a += *b;
    }
    matmul_tn(&dq, u, g.wq, t, qd, dm, true);
    matmul_tn(&dk, u, g.wk, t, kvd, dm, true);
    matmul_tn(&dv, u, g.wv, t, kvd, dm, true);
    matmul_nn(&dq, w.wq, du, t, qd, dm, true);
    matmul_nn(&dk, w.wk, du, t, kvd, dm, true);
    matmul_nn(&dv, w.wv, du, t, kvd, dm, true);
}

struct CoreGrads<'a, F> {
    /// Gradient w.r.t. encoded queries, keys and values.
    dq: &'a mut [F],
    dq_raw: &'a mut [F],
    dk: &'a mut [F],
    dv: &'a mut [F],
    reg_k: &'a mut [F],
    reg_v: &'a mut [F],
}

/// `dS = P ⊙ (dP − ⟨P, dP⟩) · scale`, in place over `dp`.
fn softmax_backward_row<F: Real>(p: &[F], dp: &mut [F], scale: F) {
    let inner = dot(p, dp);
    for (x, &pi) in dp.iter_mut().zip(p) {
        *x = pi * (*x - inner) * scale;
    }
}

fn spatial_core_backward<F: Real>(
    ctx: &AttnContext<'_, F>,
    w: &AttnWeights<'_, F>,
    c: &AttnCache<F>,
    d_o: &[F],
    d_agg: &[F],
    gr: &mut CoreGrads<'_, F>,
) {
    let s = ctx.tokens_per_view();
    let (d, r) = (ctx.head_dim, ctx.registers);
    let (qd, kvd) = (ctx.q_heads * d, ctx.kv_heads * d);
    let row = s + r;
    let scale = F::of(ctx.scale());
    let mut ds = vec![F::zero(); s * row];
    for view in 0..ctx.views {
        if ctx.hidden[view] {
            continue;
        }
        let base = view * s;
        for h in 0..ctx.q_heads {
            let g = h / ctx.group();
            let p_off = (view * ctx.q_heads + h) * s * row;
            let p = &c.probs[p_off..p_off + s * row];
            let dah = MatRef::strided(&d_agg[base * qd + h * d..], s, d, qd);
            let vg = MatRef::strided(&c.v[base * kvd + g * d..], s, d, kvd);
            gemm(F::one(), dah, vg.t(), F::zero(), MatMut::strided(&mut ds, s, s, row));
            for i in 0..s {
                let doi = &d_o[(base + i) * qd + h * d..(base + i) * qd + (h + 1) * d];
                for rr in 0..r {
                    let rv = &w.reg_v[rr * kvd + g * d..rr * kvd + (g + 1) * d];
                    ds[i * row + s + rr] = dot(doi, rv);
                    let pr = p[i * row + s + rr];
                    for (x, &y) in gr.reg_v[rr * kvd + g * d..rr * kvd + (g + 1) * d].iter_mut().zip(doi) {
                        *x += pr * y;
                    }
                }
                softmax_backward_row(&p[i * row..(i + 1) * row], &mut ds[i * row..(i + 1) * row], scale);
                let qr = &c.q_raw[(base + i) * qd + h * d..(base + i) * qd + (h + 1) * d];
                for rr in 0..r {
                    let dsr = ds[i * row + s + rr];
                    let rk = &w.reg_k[rr * kvd + g * d..rr * kvd + (g + 1) * d];
                    let dqr = &mut gr.dq_raw[(base + i) * qd + h * d..(base + i) * qd + (h + 1) * d];
                    for (x, &y) in dqr.iter_mut().zip(rk) {
                        *x += dsr * y;
                    }
                    for (x, &y) in gr.reg_k[rr * kvd + g * d..rr * kvd + (g + 1) * d].iter_mut().zip(qr) {
                        *x += dsr * y;
                    }
                }
            }
            let ds_tok = MatRef::strided(&ds, s, s, row);
            let kg = MatRef::strided(&c.k[base * kvd + g * d..], s, d, kvd);
            gemm(
                F::one(),
                ds_tok,
                kg,
                F::zero(),
                MatMut::strided(&mut gr.dq[base * qd + h * d..], s, d, qd),
            );
            let qh = MatRef::strided(&c.q[base * qd + h * d..], s, d, qd);
            gemm(
                F::one(),
                ds_tok.t(),
                qh,
                F::one(),
                MatMut::strided(&mut gr.dk[base * kvd + g * d..], s, d, kvd),
            );
            gemm(
                F::one(),
                MatRef::strided(p, s, s, row).t(),
                dah,
                F::one(),
                MatMut::strided(&mut gr.dv[base * kvd + g * d..], s, d, kvd),
            );
        }
    }
}

fn temporal_core_backward<F: Real>(
    ctx: &AttnContext<'_, F>,
    w: &AttnWeights<'_, F>,
    c: &AttnCache<F>,
    d_o: &[F],
    d_agg: &[F],
    gr: &mut CoreGrads<'_, F>,
) {
    let (d, r, hq) = (ctx.head_dim, ctx.registers, ctx.q_heads);
    let (qd, kvd) = (hq * d, ctx.kv_heads * d);
    let scale = F::of(ctx.scale());
    let mut ds = Vec::new();
    for tok in 0..ctx.tokens() {
        if c.prob_off[tok + 1] == c.prob_off[tok] {
            continue;
        }
        let ks = &c.keys[c.key_off[tok]..c.key_off[tok + 1]];
        let n = ks.len() + r;
        for h in 0..hq {
            let g = h / ctx.group();
            let p = &c.probs[c.prob_off[tok] + h * n..c.prob_off[tok] + (h + 1) * n];
            let da = &d_agg[tok * qd + h * d..tok * qd + (h + 1) * d];
            let doi = &d_o[tok * qd + h * d..tok * qd + (h + 1) * d];
            ds.clear();
            for (&pj, &kt) in p.iter().zip(ks) {
                let kt = kt as usize;
                let (lo, hi) = (kt * kvd + g * d, kt * kvd + (g + 1) * d);
                ds.push(dot(da, &c.v[lo..hi]));
                for (x, &y) in gr.dv[lo..hi].iter_mut().zip(da) {
                    *x += pj * y;
                }
            }
            for rr in 0..r {
                let (lo, hi) = (rr * kvd + g * d, rr * kvd + (g + 1) * d);
                ds.push(dot(doi, &w.reg_v[lo..hi]));
                let pr = p[ks.len() + rr];
                for (x, &y) in gr.reg_v[lo..hi].iter_mut().zip(doi) {
                    *x += pr * y;
                }
            }
            softmax_backward_row(p, &mut ds, scale);
            let qt = &c.q[tok * qd + h * d..tok * qd + (h + 1) * d];
            let dqt = &mut gr.dq[tok * qd + h * d..tok * qd + (h + 1) * d];
            for (&dsj, &kt) in ds.iter().zip(ks) {
                let kt = kt as usize;
                let (lo, hi) = (kt * kvd + g * d, kt * kvd + (g + 1) * d);
                for (x, &y) in dqt.iter_mut().zip(&c.k[lo..hi]) {
                    *x += dsj * y;
                }
                for (x, &y) in gr.dk[lo..hi].iter_mut().zip(qt) {
                    *x += dsj * y;
                }
            }
            let qr = &c.q_raw[tok * qd + h * d..tok * qd + (h + 1) * d];
            let dqr = &mut gr.dq_raw[tok * qd + h * d..tok * qd + (h + 1) * d];
            for rr in 0..r {
                let dsr = ds[ks.len() + rr];
                let (lo, hi) = (rr * kvd + g * d, rr * kvd + (g + 1) * d);
                for (x, &y) in dqr.iter_mut().zip(&w.reg_k[lo..hi]) {
                    *x += dsr * y;
                }
                for (x, &y) in gr.reg_k[lo..hi].iter_mut().zip(qr) {
                    *x += dsr * y;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_offsets() {
        // K = 2 covers the row itself and the next one
        assert_eq!(window_range(3, 2, 8), (3, 5));
        assert_eq!(window_range(7, 2, 8), (7, 8));
        assert_eq!(window_range(0, 3, 8), (0, 2));
        assert_eq!(window_range(4, 1, 8), (4, 5));
        assert_eq!(window_range(4, 17, 8), (0, 8));
    }
}
