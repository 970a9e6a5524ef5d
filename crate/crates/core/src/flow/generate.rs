//! Euler sampling of target views with classifier-free guidance.

use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::{Schedule, ScheduleKind};
use crate::image::Image;
use crate::net::{patchify, unpatchify, ModelConfig, Role, SceneInputs, ViewAttr};
use crate::real::Real;
use crate::{Error, Result};

/// Anything that predicts `v = ε − z` for every token of a scene.
pub trait VelocityModel<F: Real> {
    fn config(&self) -> &ModelConfig;

    /// Per-token velocity `[views · gh · gw, patch_dim]`.
    fn velocity(&self, inputs: &SceneInputs<F>, t: F) -> Result<Vec<F>>;
}

impl<F: Real, M: VelocityModel<F> + ?Sized> VelocityModel<F> for &M {
    fn config(&self) -> &ModelConfig {
        (**self).config()
    }

    fn velocity(&self, inputs: &SceneInputs<F>, t: F) -> Result<Vec<F>> {
        (**self).velocity(inputs, t)
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub schedule: Schedule,
    /// `v̂ = v_u + w·(v_c − v_u)`; `w = 1` skips the unconditional pass.
    pub cfg_scale: f64,
    /// Generate targets in chunks of this many views, feeding each finished
    /// chunk back as references. `None` generates all targets jointly.
    pub autoregressive: Option<usize>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            schedule: Schedule::build(ScheduleKind::LinearQuadratic, 25).expect("valid default schedule"),
            cfg_scale: 1.5,
            autoregressive: None,
        }
    }
}

/// Synthesises one image per entry of `target_attrs` from the references.
///
/// Noise for each generated chunk is drawn from `rng` in order, so the
/// autoregressive mode equals a sequence of single-chunk calls that append
/// their outputs to the references.
pub fn generate<F: Real, M: VelocityModel<F> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    references: &[Image<F>],
    ref_attrs: &[ViewAttr],
    target_attrs: &[ViewAttr],
    opts: &GenerateOptions,
    rng: &mut R,
) -> Result<Vec<Image<F>>> {
    if target_attrs.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let Some(chunk) = opts.autoregressive else {
        return generate_scene(model, references, ref_attrs, target_attrs, &opts.schedule, opts.cfg_scale, rng);
    };
    if chunk == 0 {
        return Err(Error::invalid("autoregressive chunk size must be positive"));
    }
    let mut refs = references.to_vec();
    let mut attrs = ref_attrs.to_vec();
    let mut out = Vec::with_capacity(target_attrs.len());
    for group in target_attrs.chunks(chunk) {
        let imgs = generate_scene(model, &refs, &attrs, group, &opts.schedule, opts.cfg_scale, rng)?;
        refs.extend(imgs.iter().cloned());
        attrs.extend_from_slice(group);
        out.extend(imgs);
    }
    Ok(out)
}

/// Joint generation of all `target_attrs` in one scene.
pub fn generate_scene<F: Real, M: VelocityModel<F> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    references: &[Image<F>],
    ref_attrs: &[ViewAttr],
    target_attrs: &[ViewAttr],
    schedule: &Schedule,
    cfg_scale: f64,
    rng: &mut R,
) -> Result<Vec<Image<F>>> {
    let cfg = model.config();
    if target_attrs.is_empty() {
        return Err(Error::EmptyTargets);
    }
    if references.len() != ref_attrs.len() {
        return Err(Error::shape("one attribute per reference view is required"));
    }
    if !cfg_scale.is_finite() {
        return Err(Error::invalid("guidance scale must be finite"));
    }
    let (n, m) = (references.len(), target_attrs.len());
    let s = cfg.tokens_per_view();
    let pd = cfg.patch_dim();
    let (ref_patches, gh, gw) = patchify::<F, F>(references, cfg.patch)?;
    if n > 0 && (gh, gw) != (cfg.grid_h, cfg.grid_w) {
        return Err(Error::shape(format!(
            "references are {gh}×{gw} patches, model expects {}×{}",
            cfg.grid_h, cfg.grid_w
        )));
    }
    let mut z: Vec<F> = (0..m * s * pd).map(|_| F::of(rng.sample::<f64, _>(StandardNormal))).collect();

    let attrs: Vec<ViewAttr> = ref_attrs.iter().chain(target_attrs).copied().collect();
    let roles: Vec<Role> = (0..n + m).map(|v| if v < n { Role::Reference } else { Role::Target }).collect();
    let mut inputs = SceneInputs::new(cfg, [ref_patches.as_slice(), &z].concat(), attrs, roles)?;
    let guided = cfg_scale != 1.0 && n > 0;
    let w = F::of(cfg_scale);
    let split = n * s * pd;

    for step in schedule.grid.windows(2) {
        let (t0, t1) = (step[0], step[1]);
        inputs.patches[split..].copy_from_slice(&z);
        inputs.hidden.iter_mut().for_each(|h| *h = false);
        let vc = model.velocity(&inputs, F::of(t0))?;
        let dt = F::of(t1 - t0);
        if guided {
            inputs.hidden[..n].iter_mut().for_each(|h| *h = true);
            let vu = model.velocity(&inputs, F::of(t0))?;
            for (i, zi) in z.iter_mut().enumerate() {
                let (c, u) = (vc[split + i], vu[split + i]);
                *zi += dt * (u + w * (c - u));
            }
        } else {
            for (zi, &v) in z.iter_mut().zip(&vc[split..]) {
                *zi += dt * v;
            }
        }
    }
    let mut images = unpatchify(&z, m, cfg.grid_h, cfg.grid_w, cfg.patch, cfg.channels)?;
    images.iter_mut().for_each(Image::clamp_unit);
    Ok(images)
}

/// Exact velocity field for a point-mass data distribution: targets are
/// known, so `v(x, t) = (x − z)/t` on the straight path through `x`.
#[derive(Debug, Clone)]
pub struct OracleVelocity<F> {
    pub config: ModelConfig,
    /// Clean patches of each known view, keyed by its attribute.
    pub targets: Vec<(ViewAttr, Vec<F>)>,
}

impl<F: Real> VelocityModel<F> for OracleVelocity<F> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn velocity(&self, inputs: &SceneInputs<F>, t: F) -> Result<Vec<F>> {
        let w = self.config.tokens_per_view() * self.config.patch_dim();
        let mut out = vec![F::zero(); inputs.patches.len()];
        for v in inputs.target_views() {
            let clean = self
                .targets
                .iter()
                .find(|(a, _)| *a == inputs.attrs[v])
                .map(|(_, p)| p)
                .ok_or_else(|| Error::invalid("oracle has no clean view for this target"))?;
            for i in 0..w {
                out[v * w + i] = (inputs.patches[v * w + i] - clean[i]) / t;
            }
        }
        Ok(out)
    }
}
