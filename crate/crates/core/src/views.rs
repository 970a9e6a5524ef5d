//! Reference/target partitioning and random view masking.
//!
//! Per training scene of `V` views:
//!
//! 1. `N ∈ [1, V−1]` reference views are drawn with `P(N = n) ∝ 2⁻ⁿ`;
//! 2. a uniformly random subset of that size becomes the references;
//! 3. sub-counts `n′ ~ U[1, N]` and `m′ ~ U[1, M]` pick which references
//!    stay visible and which targets enter the loss. Every other view is
//!    hidden from all attention (and from the loss), which is equivalent to
//!    removing it from the scene;
//! 4. with the guidance-dropout probability every reference is hidden,
//!    training the unconditional branch used at inference.

use rand::seq::index::sample;
use rand::Rng;

use crate::net::Role;
use crate::{Error, Result};

/// `P(N = n)` for `n = 1..V−1` (index 0 holds `n = 1`).
pub fn num_refs_probabilities(views: usize) -> Result<Vec<f64>> {
    if views < 2 {
        return Err(Error::invalid(format!("need at least 2 views, got {views}")));
    }
    let w: Vec<f64> = (1..views).map(|n| 0.5f64.powi(n as i32)).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Draws the reference count `N ∈ [1, V−1]`.
pub fn sample_num_refs<R: Rng + ?Sized>(views: usize, rng: &mut R) -> Result<usize> {
    let probs = num_refs_probabilities(views)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i + 1);
        }
    }
    Ok(views - 1)
}

/// Marks a uniformly random subset of `n` views as references.
pub fn partition<R: Rng + ?Sized>(views: usize, n: usize, rng: &mut R) -> Result<Vec<Role>> {
    if n == 0 || n >= views {
        return Err(Error::invalid(format!("reference count {n} outside [1, {}]", views.saturating_sub(1))));
    }
    let mut roles = vec![Role::Target; views];
    for i in sample(rng, views, n) {
        roles[i] = Role::Reference;
    }
    Ok(roles)
}

/// Which views take part in one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewMask {
    /// Hidden views are invisible to every query and carry no loss.
    pub hidden: Vec<bool>,
    /// Visible reference count `n′` (0 after guidance dropout).
    pub visible_refs: usize,
    /// Loss-bearing target count `m′`.
    pub visible_targets: usize,
}

impl ViewMask {
    /// Per-view loss mask: visible targets.
    pub fn loss_views(&self, roles: &[Role]) -> Vec<bool> {
        roles
            .iter()
            .zip(&self.hidden)
            .map(|(&r, &h)| r == Role::Target && !h)
            .collect()
    }
}

fn keep_random<R: Rng + ?Sized>(members: &[usize], keep: usize, hidden: &mut [bool], rng: &mut R) {
    let mut kept = vec![false; members.len()];
    for i in sample(rng, members.len(), keep) {
        kept[i] = true;
    }
    for (&v, k) in members.iter().zip(kept) {
        hidden[v] = !k;
    }
}

/// Samples `n′ ~ U[1, N]`, `m′ ~ U[1, M]` and hides the rest.
pub fn random_mask<R: Rng + ?Sized>(roles: &[Role], rng: &mut R) -> Result<ViewMask> {
    let refs: Vec<usize> = (0..roles.len()).filter(|&v| roles[v] == Role::Reference).collect();
    let targets: Vec<usize> = (0..roles.len()).filter(|&v| roles[v] == Role::Target).collect();
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let n_vis = if refs.is_empty() { 0 } else { rng.random_range(1..=refs.len()) };
    let m_vis = rng.random_range(1..=targets.len());
    let mut hidden = vec![false; roles.len()];
    keep_random(&refs, n_vis, &mut hidden, rng);
    keep_random(&targets, m_vis, &mut hidden, rng);
    Ok(ViewMask {
        hidden,
        visible_refs: n_vis,
        visible_targets: m_vis,
    })
}

/// One scene's roles and mask for a training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewBatch {
    pub scene: u64,
    pub roles: Vec<Role>,
    pub mask: ViewMask,
    /// All references hidden for guidance training.
    pub dropped_refs: bool,
}

/// Steps 1–4 of the module docs.
pub fn sample_view_batch<R: Rng + ?Sized>(scene: u64, views: usize, cfg_dropout: f64, rng: &mut R) -> Result<ViewBatch> {
    let n = sample_num_refs(views, rng)?;
    let roles = partition(views, n, rng)?;
    let mut mask = random_mask(&roles, rng)?;
    let dropped_refs = rng.random::<f64>() < cfg_dropout;
    if dropped_refs {
        for (h, r) in mask.hidden.iter_mut().zip(&roles) {
            if *r == Role::Reference {
                *h = true;
            }
        }
        mask.visible_refs = 0;
    }
    Ok(ViewBatch {
        scene,
        roles,
        mask,
        dropped_refs,
    })
}
