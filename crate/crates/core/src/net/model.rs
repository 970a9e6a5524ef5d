//! Full network forward and reverse passes.

use super::attention::{
    attention_backward, attention_forward, AttnCache, AttnContext, AttnGrads, AttnKind, AttnWeights, TokenReps,
};
use super::layers::{
    layer_norm, layer_norm_backward, modulate, modulate_backward, swiglu_backward, swiglu_forward, timestep_features,
    SwigluCache,
};
use super::params::{AttnSlots, ModelParams};
use super::{ModelConfig, Role, SceneInputs};
use crate::flow::VelocityModel;
use crate::real::{matmul_nn, matmul_nt, matmul_tn, silu, silu_grad, Real};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct SubCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
    u: Vec<F>,
    /// Sub-block output before gating.
    out: Vec<F>,
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    modv: Vec<F>,
    subs: Vec<SubCache<F>>,
    spatial: AttnCache<F>,
    temporal: AttnCache<F>,
    ffn: SwigluCache<F>,
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    xin: Vec<F>,
    tfeat: Vec<F>,
    a1: Vec<F>,
    h1: Vec<F>,
    temb: Vec<F>,
    cond: Vec<F>,
    spatial_reps: TokenReps<F>,
    temporal_reps: TokenReps<F>,
    layers: Vec<LayerCache<F>>,
    final_mod: Vec<F>,
    final_xhat: Vec<F>,
    final_rstd: Vec<F>,
    final_u: Vec<F>,
}

impl<F> ForwardCache<F> {
    /// Temporal-attention key counts per query token for `layer`.
    pub fn temporal_key_counts(&self, layer: usize, registers: usize) -> Vec<usize> {
        self.layers[layer].temporal.key_counts(registers)
    }
}

fn attn_weights<'a, F: Real>(p: &'a ModelParams<F>, s: &AttnSlots) -> AttnWeights<'a, F> {
    AttnWeights {
        wq: p.get(s.wq),
        wk: p.get(s.wk),
        wv: p.get(s.wv),
        wo: p.get(s.wo),
        reg_k: p.get(s.reg_k),
        reg_v: p.get(s.reg_v),
    }
}

/// Splits the contiguous gradient range of one attention block.
fn attn_grads<'a, F>(grads: &'a mut [F], s: &AttnSlots) -> AttnGrads<'a, F> {
    debug_assert_eq!(s.wk.offset, s.wq.offset + s.wq.len());
    debug_assert_eq!(s.reg_v.offset, s.reg_k.offset + s.reg_k.len());
    let all = &mut grads[s.wq.offset..s.reg_v.offset + s.reg_v.len()];
    let (wq, rest) = all.split_at_mut(s.wq.len());
    let (wk, rest) = rest.split_at_mut(s.wk.len());
    let (wv, rest) = rest.split_at_mut(s.wv.len());
    let (wo, rest) = rest.split_at_mut(s.wo.len());
    let (reg_k, reg_v) = rest.split_at_mut(s.reg_k.len());
    AttnGrads {
        wq,
        wk,
        wv,
        wo,
        reg_k,
        reg_v,
    }
}

fn context<'a, F: Real>(
    cfg: &ModelConfig,
    kind: AttnKind,
    inputs: &'a SceneInputs<F>,
    reps: &'a TokenReps<F>,
) -> AttnContext<'a, F> {
    AttnContext {
        kind,
        views: inputs.views,
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        hidden_dim: cfg.hidden,
        q_heads: cfg.q_heads,
        kv_heads: cfg.kv_heads,
        head_dim: cfg.head_dim(),
        registers: cfg.registers,
        value_transform: cfg.value_transform,
        reps,
        roles: &inputs.roles,
        hidden: &inputs.hidden,
    }
}

fn add_bias<F: Real>(y: &mut [F], b: &[F]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (x, &bi) in row.iter_mut().zip(b) {
            *x += bi;
        }
    }
}

fn col_sums<F: Real>(x: &[F], cols: usize, out: &mut [F]) {
    for row in x.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `y = W x + b` for a single vector.
fn linear_vec<F: Real>(w: &[F], b: &[F], x: &[F]) -> Vec<F> {
    let mut y = b.to_vec();
    matmul_nt(x, w, &mut y, 1, x.len(), b.len(), true);
    y
}

fn embed_input<F: Real>(cfg: &ModelConfig, inputs: &SceneInputs<F>) -> Vec<F> {
    if cfg.aux_dim == 0 {
        return inputs.patches.clone();
    }
    let (pd, ad) = (cfg.patch_dim(), cfg.aux_dim);
    let t = inputs.views * cfg.tokens_per_view();
    let mut xin = Vec::with_capacity(t * (pd + ad));
    for i in 0..t {
        xin.extend_from_slice(&inputs.patches[i * pd..(i + 1) * pd]);
        xin.extend_from_slice(&inputs.aux[i * ad..(i + 1) * ad]);
    }
    xin
}

/// Patch embedding plus bias plus the learned reference-role vector.
fn embed<F: Real>(p: &ModelParams<F>, inputs: &SceneInputs<F>, xin: &[F]) -> Vec<F> {
    let cfg = &p.config;
    let s = p.slots();
    let (t, d) = (inputs.views * cfg.tokens_per_view(), cfg.hidden);
    let mut x = vec![F::zero(); t * d];
    matmul_nt(xin, p.get(s.embed_w), &mut x, t, cfg.in_dim(), d, false);
    add_bias(&mut x, p.get(s.embed_b));
    let role = p.get(s.role);
    let sv = cfg.tokens_per_view();
    for v in 0..inputs.views {
        if inputs.roles[v] == Role::Reference {
            add_bias(&mut x[v * sv * d..(v + 1) * sv * d], role);
        }
    }
    x
}

fn check_inputs<F: Real>(cfg: &ModelConfig, inputs: &SceneInputs<F>) -> Result<()> {
    inputs.validate(cfg)?;
    if inputs.target_views().is_empty() {
        return Err(Error::EmptyTargets);
    }
    Ok(())
}

/// Runs the network on one scene at timestep `t`, returning per-token
/// velocity predictions `[T, patch_dim]` for every token (callers select
/// targets) and the cache for [`backward`]. With `taps`, the hidden state
/// after each layer's residual is appended.
pub fn forward<F: Real>(
    params: &ModelParams<F>,
    inputs: &SceneInputs<F>,
    t: F,
    mut taps: Option<&mut Vec<Vec<F>>>,
) -> Result<(Vec<F>, ForwardCache<F>)> {
    let cfg = &params.config;
    check_inputs(cfg, inputs)?;
    let s = params.slots();
    let d = cfg.hidden;
    let tokens = inputs.views * cfg.tokens_per_view();

    let xin = embed_input(cfg, inputs);
    let mut x = embed(params, inputs, &xin);

    let tfeat = timestep_features(t, cfg.time_freq_dim);
    let a1 = linear_vec(params.get(s.time_fc1_w), params.get(s.time_fc1_b), &tfeat);
    let h1: Vec<F> = a1.iter().map(|&v| silu(v)).collect();
    let temb = linear_vec(params.get(s.time_fc2_w), params.get(s.time_fc2_b), &h1);
    let cond: Vec<F> = temb.iter().map(|&v| silu(v)).collect();

    let spatial_reps = TokenReps::spatial(cfg)?;
    let temporal_reps = TokenReps::temporal(cfg, &inputs.attrs)?;
    let sctx = context(cfg, AttnKind::Spatial, inputs, &spatial_reps);
    let tctx = context(cfg, AttnKind::Temporal { window: cfg.window }, inputs, &temporal_reps);

    let mut layers = Vec::with_capacity(cfg.layers);
    for ls in &s.layers {
        let modv = linear_vec(params.get(ls.ada_w), params.get(ls.ada_b), &cond);
        let mut subs = Vec::with_capacity(3);
        let mut spatial = AttnCache::default();
        let mut temporal = AttnCache::default();
        let mut ffn = SwigluCache::default();
        for k in 0..3 {
            let m = &modv[3 * k * d..3 * (k + 1) * d];
            let (shift, scale, gate) = (&m[..d], &m[d..2 * d], &m[2 * d..]);
            let mut xhat = vec![F::zero(); tokens * d];
            let mut rstd = vec![F::zero(); tokens];
            layer_norm(&x, d, &mut xhat, &mut rstd);
            let mut u = vec![F::zero(); tokens * d];
            modulate(&xhat, shift, scale, &mut u);
            let out = match k {
                0 => {
                    let (y, c) = attention_forward(&sctx, &attn_weights(params, &ls.spatial), &u);
                    spatial = c;
                    y
                }
                1 => {
                    let (y, c) = attention_forward(&tctx, &attn_weights(params, &ls.temporal), &u);
                    temporal = c;
                    y
                }
                _ => {
                    let mut y = vec![F::zero(); tokens * d];
                    ffn = swiglu_forward(
                        &u,
                        tokens,
                        d,
                        cfg.ffn_hidden,
                        params.get(ls.ffn_gate),
                        params.get(ls.ffn_up),
                        params.get(ls.ffn_down),
                        &mut y,
                    );
                    y
                }
            };
            for (xr, orow) in x.chunks_exact_mut(d).zip(out.chunks_exact(d)) {
                for c in 0..d {
                    xr[c] += gate[c] * orow[c];
                }
            }
            subs.push(SubCache { xhat, rstd, u, out });
        }
        if let Some(taps) = taps.as_deref_mut() {
            taps.push(x.clone());
        }
        layers.push(LayerCache {
            modv,
            subs,
            spatial,
            temporal,
            ffn,
        });
    }

    let final_mod = linear_vec(params.get(s.final_w), params.get(s.final_b), &cond);
    let mut final_xhat = vec![F::zero(); tokens * d];
    let mut final_rstd = vec![F::zero(); tokens];
    layer_norm(&x, d, &mut final_xhat, &mut final_rstd);
    let mut final_u = vec![F::zero(); tokens * d];
    modulate(&final_xhat, &final_mod[..d], &final_mod[d..], &mut final_u);
    let pd = cfg.patch_dim();
    let mut out = vec![F::zero(); tokens * pd];
    matmul_nt(&final_u, params.get(s.unembed_w), &mut out, tokens, d, pd, false);
    add_bias(&mut out, params.get(s.unembed_b));

    Ok((
        out,
        ForwardCache {
            xin,
            tfeat,
            a1,
            h1,
            temb,
            cond,
            spatial_reps,
            temporal_reps,
            layers,
            final_mod,
            final_xhat,
            final_rstd,
            final_u,
        },
    ))
}

/// Velocity prediction for every token, without keeping the cache.
pub fn predict<F: Real>(params: &ModelParams<F>, inputs: &SceneInputs<F>, t: F) -> Result<Vec<F>> {
    forward(params, inputs, t, None).map(|(out, _)| out)
}

/// Token embeddings `[T, hidden]` before the first layer.
pub fn embed_tokens<F: Real>(params: &ModelParams<F>, inputs: &SceneInputs<F>) -> Result<Vec<F>> {
    check_inputs(&params.config, inputs)?;
    Ok(embed(params, inputs, &embed_input(&params.config, inputs)))
}

/// `unembed(LN(embed(x)))`: what the network computes while every AdaLN
/// projection is zero.
pub fn embed_unembed_path<F: Real>(params: &ModelParams<F>, inputs: &SceneInputs<F>) -> Result<Vec<F>> {
    let cfg = &params.config;
    check_inputs(cfg, inputs)?;
    let s = params.slots();
    let (tokens, d, pd) = (inputs.views * cfg.tokens_per_view(), cfg.hidden, cfg.patch_dim());
    let x = embed(params, inputs, &embed_input(cfg, inputs));
    let mut xhat = vec![F::zero(); tokens * d];
    let mut rstd = vec![F::zero(); tokens];
    layer_norm(&x, d, &mut xhat, &mut rstd);
    let mut out = vec![F::zero(); tokens * pd];
    matmul_nt(&xhat, params.get(s.unembed_w), &mut out, tokens, d, pd, false);
    add_bias(&mut out, params.get(s.unembed_b));
    Ok(out)
}

/// Accumulates `∂L/∂θ` into `grads` given `dout = ∂L/∂out` (`[T, patch_dim]`).
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    inputs: &SceneInputs<F>,
    cache: &ForwardCache<F>,
    dout: &[F],
    grads: &mut [F],
) -> Result<()> {
    let cfg = &params.config;
    let s = params.slots();
    let (d, pd) = (cfg.hidden, cfg.patch_dim());
    let tokens = inputs.views * cfg.tokens_per_view();
    if grads.len() != params.len() || dout.len() != tokens * pd {
        return Err(Error::shape("gradient buffer or output gradient size"));
    }

    // Output head.
    matmul_tn(dout, &cache.final_u, &mut grads[s.unembed_w.range()], tokens, pd, d, true);
    col_sums(dout, pd, &mut grads[s.unembed_b.range()]);
    let mut du = vec![F::zero(); tokens * d];
    matmul_nn(dout, params.get(s.unembed_w), &mut du, tokens, pd, d, false);
    let mut dmod = vec![F::zero(); 2 * d];
    let mut dxhat = vec![F::zero(); tokens * d];
    {
        let (dshift, dscale) = dmod.split_at_mut(d);
        modulate_backward(&du, &cache.final_xhat, &cache.final_mod[d..], &mut dxhat, dshift, dscale);
    }
    let mut dx = vec![F::zero(); tokens * d];
    layer_norm_backward(&dxhat, &cache.final_xhat, &cache.final_rstd, d, &mut dx);
    let mut dcond = vec![F::zero(); d];
    cond_backward(params, s.final_w, s.final_b, &cache.cond, &dmod, grads, &mut dcond);

    let spatial_ctx = context(cfg, AttnKind::Spatial, inputs, &cache.spatial_reps);
    let temporal_ctx = context(cfg, AttnKind::Temporal { window: cfg.window }, inputs, &cache.temporal_reps);

    for (ls, lc) in s.layers.iter().zip(&cache.layers).rev() {
        let mut dmod = vec![F::zero(); 9 * d];
        for k in (0..3).rev() {
            let sub = &lc.subs[k];
            let m = &lc.modv[3 * k * d..3 * (k + 1) * d];
            let gate = &m[2 * d..];
            let mut dsub = vec![F::zero(); tokens * d];
            {
                let dgate = &mut dmod[3 * k * d + 2 * d..3 * (k + 1) * d];
                for ((dxr, orow), dsr) in dx.chunks_exact(d).zip(sub.out.chunks_exact(d)).zip(dsub.chunks_exact_mut(d)) {
                    for c in 0..d {
                        dgate[c] += dxr[c] * orow[c];
                        dsr[c] = dxr[c] * gate[c];
                    }
                }
            }
            let mut du = vec![F::zero(); tokens * d];
            match k {
                0 | 1 => {
                    let (ctx, slots, ac) = if k == 0 {
                        (&spatial_ctx, &ls.spatial, &lc.spatial)
                    } else {
                        (&temporal_ctx, &ls.temporal, &lc.temporal)
                    };
                    let w = attn_weights(params, slots);
                    let mut g = attn_grads(grads, slots);
                    attention_backward(ctx, &w, &sub.u, ac, &dsub, &mut g, &mut du);
                }
                _ => {
                    debug_assert_eq!(ls.ffn_up.offset, ls.ffn_gate.offset + ls.ffn_gate.len());
                    let all = &mut grads[ls.ffn_gate.offset..ls.ffn_down.offset + ls.ffn_down.len()];
                    let (gg, rest) = all.split_at_mut(ls.ffn_gate.len());
                    let (gu, gd) = rest.split_at_mut(ls.ffn_up.len());
                    swiglu_backward(
                        &dsub,
                        &sub.u,
                        &lc.ffn,
                        tokens,
                        d,
                        cfg.ffn_hidden,
                        params.get(ls.ffn_gate),
                        params.get(ls.ffn_up),
                        params.get(ls.ffn_down),
                        gg,
                        gu,
                        gd,
                        &mut du,
                    );
                }
            }
            let mut dxhat = vec![F::zero(); tokens * d];
            {
                let (dshift, rest) = dmod[3 * k * d..].split_at_mut(d);
                let dscale = &mut rest[..d];
                modulate_backward(&du, &sub.xhat, &m[d..2 * d], &mut dxhat, dshift, dscale);
            }
            layer_norm_backward(&dxhat, &sub.xhat, &sub.rstd, d, &mut dx);
        }
        cond_backward(params, ls.ada_w, ls.ada_b, &cache.cond, &dmod, grads, &mut dcond);
    }

    // Timestep MLP.
    let dtemb: Vec<F> = dcond.iter().zip(&cache.temb).map(|(&g, &v)| g * silu_grad(v)).collect();
    outer_acc(&mut grads[s.time_fc2_w.range()], &dtemb, &cache.h1);
    add_to(&mut grads[s.time_fc2_b.range()], &dtemb);
    let mut dh1 = vec![F::zero(); d];
    matmul_nn(&dtemb, params.get(s.time_fc2_w), &mut dh1, 1, d, d, false);
    let da1: Vec<F> = dh1.iter().zip(&cache.a1).map(|(&g, &v)| g * silu_grad(v)).collect();
    outer_acc(&mut grads[s.time_fc1_w.range()], &da1, &cache.tfeat);
    add_to(&mut grads[s.time_fc1_b.range()], &da1);

    // Embedding.
    matmul_tn(&dx, &cache.xin, &mut grads[s.embed_w.range()], tokens, d, cfg.in_dim(), true);
    col_sums(&dx, d, &mut grads[s.embed_b.range()]);
    let sv = cfg.tokens_per_view();
    for v in 0..inputs.views {
        if inputs.roles[v] == Role::Reference {
            col_sums(&dx[v * sv * d..(v + 1) * sv * d], d, &mut grads[s.role.range()]);
        }
    }
    Ok(())
}

fn add_to<F: Real>(dst: &mut [F], src: &[F]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// `dst[i, j] += a[i] · b[j]`.
fn outer_acc<F: Real>(dst: &mut [F], a: &[F], b: &[F]) {
    for (row, &ai) in dst.chunks_exact_mut(b.len()).zip(a) {
        for (x, &bj) in row.iter_mut().zip(b) {
            *x += ai * bj;
        }
    }
}

/// Reverse of `m = W·cond + b`.
fn cond_backward<F: Real>(
    params: &ModelParams<F>,
    w: super::params::Slot,
    b: super::params::Slot,
    cond: &[F],
    dm: &[F],
    grads: &mut [F],
    dcond: &mut [F],
) {
    outer_acc(&mut grads[w.range()], dm, cond);
    add_to(&mut grads[b.range()], dm);
    matmul_nn(dm, params.get(w), dcond, 1, w.rows, w.cols, true);
}

/// A parameter set usable as the velocity field during generation.
#[derive(Debug, Clone)]
pub struct Network<F: Real = f32> {
    pub params: ModelParams<F>,
}

impl<F: Real> Network<F> {
    pub fn new(params: ModelParams<F>) -> Self {
        Self { params }
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self::new(ModelParams::init(config, seed)?))
    }
}

impl<F: Real> VelocityModel<F> for Network<F> {
    fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    fn velocity(&self, inputs: &SceneInputs<F>, t: F) -> Result<Vec<F>> {
        predict(&self.params, inputs, t)
    }
}
