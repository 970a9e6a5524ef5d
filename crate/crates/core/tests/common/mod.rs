#![allow(dead_code)]

use kaleido::geometry::CameraPose;
use kaleido::net::{ModelConfig, Role, SceneInputs, ViewAttr};
use kaleido::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_attrs<R: Rng>(views: usize, video: bool, rng: &mut R) -> Vec<ViewAttr> {
    (0..views)
        .map(|v| {
            if video {
                ViewAttr::Frame { index: v, count: views }
            } else {
                ViewAttr::Pose(CameraPose::random(rng, 1.0))
            }
        })
        .collect()
}

/// Random patches for `views` views, the first `refs` of them references.
pub fn random_inputs<F: Real, R: Rng>(cfg: &ModelConfig, views: usize, refs: usize, video: bool, rng: &mut R) -> SceneInputs<F> {
    let n = views * cfg.tokens_per_view() * cfg.patch_dim();
    let patches = (0..n).map(|_| F::of(rng.sample::<f64, _>(StandardNormal))).collect();
    let attrs = random_attrs(views, video, rng);
    let roles = (0..views).map(|v| if v < refs { Role::Reference } else { Role::Target }).collect();
    SceneInputs::new(cfg, patches, attrs, roles).unwrap()
}

pub fn gaussian<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The gradient-check configuration: L=2, D=64, K=2, one register.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 64,
        q_heads: 4,
        kv_heads: 2,
        window: 2,
        patch: 2,
        channels: 3,
        registers: 1,
        grid_h: 3,
        grid_w: 3,
        ffn_hidden: 96,
        aux_dim: 0,
        time_freq_dim: 16,
        value_transform: true,
    }
}
