//! Relative positional encoding through group representations.
//!
//! Every token carries a geometric attribute `g`: a pair of patch angles
//! `(θ_h, θ_w)` plus either a camera pose (3D data) or a frame angle (video).
//! `ρ(g)` is a block-diagonal matrix of 2×2 rotations and 4×4 rigid
//! transforms. Attention transforms queries by `ρ(g)⁻ᵀ`, keys and values by
//! `ρ(g)`, and outputs by `ρ(g)⁻¹`, so that
//!
//! ```text
//! score(i, j) = q_iᵀ ρ(g_i⁻¹ ∘ g_j) k_j
//! out_i       = Σ_j α_ij ρ(g_i⁻¹ ∘ g_j) v_j
//! ```
//!
//! which depend only on relative transforms. Left-composing every attribute
//! with a common element leaves all scores and outputs unchanged.
//!
//! Feature layout of one head of dimension `d`, blocks in order:
//!
//! | kind            | θ_h bands | θ_w bands | remainder                      |
//! |-----------------|-----------|-----------|--------------------------------|
//! | `Spatial`       | d/4       | d/4       | none                           |
//! | `TemporalOr3D`  | d/8       | d/8       | d/4 θ_t bands or d/8 SE(3) 4×4 |
//!
//! Band `b` of `B` rotates by `ω_b · θ` with the integer ladder
//! `ω_b = round(F^(b/(B-1)))`, `F = max(1, max(grid_h, grid_w) / 2)`.
//! Integer frequencies keep every band 2π-periodic (so `ρ` is a
//! homomorphism on angles mod 2π) and `F` stops at the grid Nyquist rate.

use std::f64::consts::TAU;

use crate::geometry::CameraPose;
use crate::real::{dot, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrMode {
    ThreeD,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrExtra {
    Pose(CameraPose),
    /// Frame angle θ_t in `[0, 2π)`.
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomAttr {
    pub theta_h: f64,
    pub theta_w: f64,
    pub extra: AttrExtra,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl GeomAttr {
    pub fn identity(mode: AttrMode) -> Self {
        let extra = match mode {
            AttrMode::ThreeD => AttrExtra::Pose(CameraPose::identity()),
            AttrMode::Video => AttrExtra::Time(0.0),
        };
        Self { theta_h: 0.0, theta_w: 0.0, extra }
    }

    pub fn mode(&self) -> AttrMode {
        match self.extra {
            AttrExtra::Pose(_) => AttrMode::ThreeD,
            AttrExtra::Time(_) => AttrMode::Video,
        }
    }

    /// Group product `self ∘ other`: angle addition mod 2π, pose composition.
    pub fn compose(&self, other: &GeomAttr) -> Result<GeomAttr> {
        let extra = match (&self.extra, &other.extra) {
            (AttrExtra::Pose(a), AttrExtra::Pose(b)) => AttrExtra::Pose(a.compose(b)),
            (AttrExtra::Time(a), AttrExtra::Time(b)) => AttrExtra::Time(wrap_angle(a + b)),
            _ => return Err(Error::Layout("cannot compose attributes of different modes".into())),
        };
        Ok(GeomAttr {
            theta_h: wrap_angle(self.theta_h + other.theta_h),
            theta_w: wrap_angle(self.theta_w + other.theta_w),
            extra,
        })
    }

    pub fn inverse(&self) -> GeomAttr {
        let extra = match &self.extra {
            AttrExtra::Pose(p) => AttrExtra::Pose(p.inverse()),
            AttrExtra::Time(t) => AttrExtra::Time(wrap_angle(-t)),
        };
        GeomAttr {
            theta_h: wrap_angle(-self.theta_h),
            theta_w: wrap_angle(-self.theta_w),
            extra,
        }
    }
}

fn grid_angle(idx: usize, n: usize) -> Result<f64> {
    if idx >= n {
        return Err(Error::IndexOutOfRange { index: idx, size: n });
    }
    Ok(TAU * idx as f64 / n as f64)
}

/// Attribute of patch `(h_idx, w_idx)` in a view with camera `pose`.
pub fn attr_3d(h_idx: usize, w_idx: usize, grid_h: usize, grid_w: usize, pose: CameraPose) -> Result<GeomAttr> {
    Ok(GeomAttr {
        theta_h: grid_angle(h_idx, grid_h)?,
        theta_w: grid_angle(w_idx, grid_w)?,
        extra: AttrExtra::Pose(pose),
    })
}

/// Attribute of patch `(h_idx, w_idx)` in frame `frame_idx` of a clip.
pub fn attr_video(
    h_idx: usize,
    w_idx: usize,
    grid_h: usize,
    grid_w: usize,
    frame_idx: usize,
    num_frames: usize,
) -> Result<GeomAttr> {
    Ok(GeomAttr {
        theta_h: grid_angle(h_idx, grid_h)?,
        theta_w: grid_angle(w_idx, grid_w)?,
        extra: AttrExtra::Time(grid_angle(frame_idx, num_frames)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Spatial,
    TemporalOr3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepLayout {
    pub head_dim: usize,
    pub kind: LayoutKind,
    /// Integer frequency per θ_h / θ_w band.
    pub spatial_freqs: Vec<f64>,
    /// Integer frequency per θ_t band (video); empty for `Spatial`.
    pub temporal_freqs: Vec<f64>,
    /// Number of repeated 4×4 pose blocks (3D); zero for `Spatial`.
    pub pose_blocks: usize,
}

/// `round(F^(b/(B-1)))` for `b = 0..B`, never below 1.
pub fn frequency_ladder(bands: usize, top: f64) -> Vec<f64> {
    let top = top.max(1.0);
    (0..bands)
        .map(|b| {
            if bands == 1 {
                1.0
            } else {
                top.powf(b as f64 / (bands - 1) as f64).round().max(1.0)
            }
        })
        .collect()
}

impl RepLayout {
    pub fn new(head_dim: usize, kind: LayoutKind, grid_h: usize, grid_w: usize) -> Result<Self> {
        let top = (grid_h.max(grid_w) as f64 / 2.0).max(1.0);
        match kind {
            LayoutKind::Spatial => {
                if head_dim == 0 || !head_dim.is_multiple_of(4) {
                    return Err(Error::Layout(format!("spatial head dim {head_dim} not divisible by 4")));
                }
                Ok(Self {
                    head_dim,
                    kind,
                    spatial_freqs: frequency_ladder(head_dim / 4, top),
                    temporal_freqs: Vec::new(),
                    pose_blocks: 0,
                })
            }
            LayoutKind::TemporalOr3D => {
                if head_dim == 0 || !head_dim.is_multiple_of(8) {
                    return Err(Error::Layout(format!("temporal/3D head dim {head_dim} not divisible by 8")));
                }
                Ok(Self {
                    head_dim,
                    kind,
                    spatial_freqs: frequency_ladder(head_dim / 8, top),
                    temporal_freqs: frequency_ladder(head_dim / 4, top),
                    pose_blocks: head_dim / 8,
                })
            }
        }
    }

    /// Dimensions given to θ_h, θ_w and the temporal/pose remainder.
    pub fn allocation(&self) -> (usize, usize, usize) {
        let hw = 2 * self.spatial_freqs.len();
        (hw, hw, self.head_dim - 2 * hw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Block<F> {
    /// 2×2 rotation `[[c, −s], [s, c]]`.
    Rot { cos: F, sin: F },
    /// 4×4 rigid transform with its inverse, both row-major.
    Rigid { m: [F; 16], inv: [F; 16] },
}

/// Which matrix derived from `ρ` to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Apply {
    Forward,
    Transpose,
    Inverse,
    InverseTranspose,
}

/// Block-diagonal `ρ(g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMatrix<F = f64> {
    pub dim: usize,
    pub blocks: Vec<Block<F>>,
}

#[inline(always)]
fn mat4_apply<F: Real>(m: &[F; 16], transpose: bool, x: &mut [F]) {
    let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
    if transpose {
        for (r, o) in x.iter_mut().enumerate().take(4) {
            *o = m[r] * a + m[4 + r] * b + m[8 + r] * c + m[12 + r] * d;
        }
    } else {
        for (r, o) in x.iter_mut().enumerate().take(4) {
            *o = m[4 * r] * a + m[4 * r + 1] * b + m[4 * r + 2] * c + m[4 * r + 3] * d;
        }
    }
}

impl<F: Real> RepMatrix<F> {
    /// In-place `x ← op(ρ) x` for a vector of length `dim`.
    #[inline]
    pub fn apply(&self, op: Apply, x: &mut [F]) {
        debug_assert_eq!(x.len(), self.dim);
        let mut off = 0;
        for block in &self.blocks {
            match block {
                Block::Rot { cos, sin } => {
                    let s = match op {
                        Apply::Forward | Apply::InverseTranspose => *sin,
                        Apply::Transpose | Apply::Inverse => -*sin,
                    };
                    let (x0, x1) = (x[off], x[off + 1]);
                    x[off] = *cos * x0 - s * x1;
                    x[off + 1] = s * x0 + *cos * x1;
                    off += 2;
                }
                Block::Rigid { m, inv } => {
                    let seg = &mut x[off..off + 4];
                    match op {
                        Apply::Forward => mat4_apply(m, false, seg),
                        Apply::Transpose => mat4_apply(m, true, seg),
                        Apply::Inverse => mat4_apply(inv, false, seg),
                        Apply::InverseTranspose => mat4_apply(inv, true, seg),
                    }
                    off += 4;
                }
            }
        }
    }

    /// Dense row-major `dim × dim` matrix.
    pub fn dense(&self) -> Vec<F> {
        let d = self.dim;
        let mut out = vec![F::zero(); d * d];
        let mut off = 0;
        for block in &self.blocks {
            match block {
                Block::Rot { cos, sin } => {
                    out[off * d + off] = *cos;
                    out[off * d + off + 1] = -*sin;
                    out[(off + 1) * d + off] = *sin;
                    out[(off + 1) * d + off + 1] = *cos;
                    off += 2;
                }
                Block::Rigid { m, .. } => {
                    for r in 0..4 {
                        for c in 0..4 {
                            out[(off + r) * d + off + c] = m[4 * r + c];
                        }
                    }
                    off += 4;
                }
            }
        }
        out
    }

    pub fn cast<G: Real>(&self) -> RepMatrix<G> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                Block::Rot { cos, sin } => Block::Rot {
                    cos: G::of(cos.as_f64()),
                    sin: G::of(sin.as_f64()),
                },
                Block::Rigid { m, inv } => Block::Rigid {
                    m: m.map(|x| G::of(x.as_f64())),
                    inv: inv.map(|x| G::of(x.as_f64())),
                },
            })
            .collect();
        RepMatrix { dim: self.dim, blocks }
    }
}

fn push_bands(blocks: &mut Vec<Block<f64>>, freqs: &[f64], theta: f64) {
    for &w in freqs {
        let (sin, cos) = (w * theta).sin_cos();
        blocks.push(Block::Rot { cos, sin });
    }
}

/// Builds `ρ(attr)` for `layout`. `Spatial` layouts accept both modes and
/// ignore the pose/time payload.
pub fn rep_matrix(attr: &GeomAttr, layout: &RepLayout) -> Result<RepMatrix> {
    let mut blocks = Vec::new();
    push_bands(&mut blocks, &layout.spatial_freqs, attr.theta_h);
    push_bands(&mut blocks, &layout.spatial_freqs, attr.theta_w);
    if layout.kind == LayoutKind::TemporalOr3D {
        match &attr.extra {
            AttrExtra::Time(theta_t) => push_bands(&mut blocks, &layout.temporal_freqs, *theta_t),
            AttrExtra::Pose(p) => {
                let m = p.matrix_flat();
                let inv = p.inverse().matrix_flat();
                blocks.extend(std::iter::repeat_n(Block::Rigid { m, inv }, layout.pose_blocks));
            }
        }
    }
    let rep = RepMatrix {
        dim: layout.head_dim,
        blocks,
    };
    debug_assert_eq!(
        rep.blocks
            .iter()
            .map(|b| match b {
                Block::Rot { .. } => 2,
                Block::Rigid { .. } => 4,
            })
            .sum::<usize>(),
        layout.head_dim
    );
    Ok(rep)
}

/// Queries, keys and values after the encoding, plus the per-token output
/// transforms `ρ(g_i)⁻¹`.
#[derive(Debug, Clone)]
pub struct GtaTransformed {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub reps: Vec<RepMatrix>,
    pub value_transform: bool,
}

impl GtaTransformed {
    /// Maps an aggregated value back into token `i`'s frame.
    pub fn apply_out(&self, i: usize, x: &mut [f64]) {
        if self.value_transform {
            self.reps[i].apply(Apply::Inverse, x);
        }
    }
}

/// Transforms per-token `q`, `k`, `v` (each of length `layout.head_dim`).
/// With `value_transform = false` only queries and keys are transformed
/// (the rotary-plus-pose-keys variant without a value path).
pub fn gta_apply(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    attrs: &[GeomAttr],
    layout: &RepLayout,
    value_transform: bool,
) -> Result<GtaTransformed> {
    let n = attrs.len();
    if q.len() != n || k.len() != n || v.len() != n {
        return Err(Error::shape("q/k/v/attrs token counts differ"));
    }
    let d = layout.head_dim;
    if q.iter().chain(k).chain(v).any(|x| x.len() != d) {
        return Err(Error::shape(format!("vectors must have head dim {d}")));
    }
    let reps = attrs.iter().map(|a| rep_matrix(a, layout)).collect::<Result<Vec<_>>>()?;
    let mut out = GtaTransformed {
        q: q.to_vec(),
        k: k.to_vec(),
        v: v.to_vec(),
        reps,
        value_transform,
    };
    for i in 0..n {
        out.reps[i].apply(Apply::InverseTranspose, &mut out.q[i]);
        out.reps[i].apply(Apply::Forward, &mut out.k[i]);
        if value_transform {
            out.reps[i].apply(Apply::Forward, &mut out.v[i]);
        }
    }
    Ok(out)
}

/// Single-head attention over the transformed tokens: returns the raw
/// (pre-softmax, unscaled) score matrix and the outputs in each query's frame.
pub fn gta_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    attrs: &[GeomAttr],
    layout: &RepLayout,
    value_transform: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let tr = gta_apply(q, k, v, attrs, layout, value_transform)?;
    let n = attrs.len();
    let d = layout.head_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let mut scores = vec![vec![0.0; n]; n];
    let mut outputs = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            scores[i][j] = dot(&tr.q[i], &tr.k[j]);
        }
        let max = scores[i].iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
        let w: Vec<f64> = scores[i].iter().map(|s| (s * scale - max).exp()).collect();
        let z: f64 = w.iter().sum();
        for j in 0..n {
            for c in 0..d {
                outputs[i][c] += w[j] / z * tr.v[j][c];
            }
        }
        tr.apply_out(i, &mut outputs[i]);
    }
    Ok((scores, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dense_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                for j in 0..d {
                    c[i * d + j] += a[i * d + k] * b[k * d + j];
                }
            }
        }
        c
    }

    fn random_attr(rng: &mut ChaCha8Rng, mode: AttrMode) -> GeomAttr {
        let extra = match mode {
            AttrMode::ThreeD => AttrExtra::Pose(CameraPose::random(rng, 0.5)),
            AttrMode::Video => AttrExtra::Time(rng.random_range(0.0..TAU)),
        };
        GeomAttr {
            theta_h: rng.random_range(0.0..TAU),
            theta_w: rng.random_range(0.0..TAU),
            extra,
        }
    }

    #[test]
    fn attribute_examples() {
        let p = CameraPose::rot_z(0.2);
        let a = attr_3d(0, 0, 16, 16, p).unwrap();
        assert_eq!((a.theta_h, a.theta_w), (0.0, 0.0));
        assert_eq!(a.extra, AttrExtra::Pose(p));
        let b = attr_3d(8, 4, 16, 16, p).unwrap();
        assert!((b.theta_h - PI).abs() < 1e-15 && (b.theta_w - PI / 2.0).abs() < 1e-15);
        assert_eq!(attr_3d(0, 3, 1, 16, p).unwrap().theta_h, 0.0);
        assert!(attr_3d(16, 0, 16, 16, p).is_err());

        let frame = |f| match attr_video(0, 0, 4, 4, f, 8).unwrap().extra {
            AttrExtra::Time(t) => t,
            _ => unreachable!(),
        };
        assert_eq!(frame(0), 0.0);
        assert!((frame(4) - PI).abs() < 1e-15);
        assert!((frame(7) - 7.0 * PI / 4.0).abs() < 1e-15);
        assert!(attr_video(0, 0, 4, 4, 8, 8).is_err());
        match attr_video(1, 1, 4, 4, 0, 1).unwrap().extra {
            AttrExtra::Time(t) => assert_eq!(t, 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn layout_allocation_and_divisibility() {
        let s = RepLayout::new(32, LayoutKind::Spatial, 16, 16).unwrap();
        assert_eq!(s.allocation(), (16, 16, 0));
        let t = RepLayout::new(32, LayoutKind::TemporalOr3D, 16, 16).unwrap();
        // 1:1:2
        assert_eq!(t.allocation(), (8, 8, 16));
        assert_eq!(t.temporal_freqs.len(), 8);
        assert_eq!(t.pose_blocks, 4);
        assert!(RepLayout::new(30, LayoutKind::Spatial, 4, 4).is_err());
        assert!(RepLayout::new(12, LayoutKind::TemporalOr3D, 4, 4).is_err());
        // ladder is integer, starts at 1 and ends at the Nyquist frequency
        assert_eq!(s.spatial_freqs.first(), Some(&1.0));
        assert_eq!(s.spatial_freqs.last(), Some(&8.0));
        assert!(s.spatial_freqs.iter().all(|w| w.fract() == 0.0));
        assert_eq!(frequency_ladder(3, 0.5), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn identity_attribute_gives_identity_matrix() {
        for (kind, mode) in [
            (LayoutKind::Spatial, AttrMode::ThreeD),
            (LayoutKind::TemporalOr3D, AttrMode::ThreeD),
            (LayoutKind::TemporalOr3D, AttrMode::Video),
        ] {
            let layout = RepLayout::new(16, kind, 8, 8).unwrap();
            let rep = rep_matrix(&GeomAttr::identity(mode), &layout).unwrap();
            let dense = rep.dense();
            for i in 0..16 {
                for j in 0..16 {
                    assert_eq!(dense[i * 16 + j], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn half_turn_band() {
        let layout = RepLayout::new(4, LayoutKind::Spatial, 1, 1).unwrap();
        assert_eq!(layout.spatial_freqs, vec![1.0]);
        let attr = GeomAttr {
            theta_h: PI,
            theta_w: 0.0,
            extra: AttrExtra::Time(0.0),
        };
        let d = rep_matrix(&attr, &layout).unwrap().dense();
        let want = [-1.0, 0.0, 0.0, -1.0];
        let got = [d[0], d[1], d[4], d[5]];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn homomorphism_on_random_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [AttrMode::ThreeD, AttrMode::Video] {
            for kind in [LayoutKind::Spatial, LayoutKind::TemporalOr3D] {
                let layout = RepLayout::new(32, kind, 16, 16).unwrap();
                for _ in 0..50 {
                    let g1 = random_attr(&mut rng, mode);
                    let g2 = random_attr(&mut rng, mode);
                    let lhs = rep_matrix(&g1.compose(&g2).unwrap(), &layout).unwrap().dense();
                    let a = rep_matrix(&g1, &layout).unwrap().dense();
                    let b = rep_matrix(&g2, &layout).unwrap().dense();
                    let rhs = dense_mul(&a, &b, 32);
                    let err = lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                    assert!(err < 1e-9, "homomorphism error {err}");
                }
            }
        }
    }

    #[test]
    fn block_application_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layout = RepLayout::new(24, LayoutKind::TemporalOr3D, 8, 8).unwrap();
        for _ in 0..20 {
            let rep = rep_matrix(&random_attr(&mut rng, AttrMode::ThreeD), &layout).unwrap();
            let dense = rep.dense();
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = x.clone();
            rep.apply(Apply::Forward, &mut y);
            let mut yt = x.clone();
            rep.apply(Apply::Transpose, &mut yt);
            for i in 0..24 {
                let want: f64 = (0..24).map(|j| dense[i * 24 + j] * x[j]).sum();
                let want_t: f64 = (0..24).map(|j| dense[j * 24 + i] * x[j]).sum();
                assert!((y[i] - want).abs() < 1e-12);
                assert!((yt[i] - want_t).abs() < 1e-12);
            }
            let mut z = y.clone();
            rep.apply(Apply::Inverse, &mut z);
            let mut w = yt.clone();
            rep.apply(Apply::InverseTranspose, &mut w);
            for i in 0..24 {
                assert!((z[i] - x[i]).abs() < 1e-12);
                assert!((w[i] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_attributes_reduce_to_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layout = RepLayout::new(16, LayoutKind::TemporalOr3D, 4, 4).unwrap();
        let g = random_attr(&mut rng, AttrMode::ThreeD);
        let n = 5;
        let rv = |rng: &mut ChaCha8Rng| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let q: Vec<_> = (0..n).map(|_| rv(&mut rng)).collect();
        let k: Vec<_> = (0..n).map(|_| rv(&mut rng)).collect();
        let v: Vec<_> = (0..n).map(|_| rv(&mut rng)).collect();
        let (scores, outs) = gta_attention(&q, &k, &v, &vec![g; n], &layout, true).unwrap();
        let plain = vec![GeomAttr::identity(AttrMode::ThreeD); n];
        let (s0, o0) = gta_attention(&q, &k, &v, &plain, &layout, true).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((scores[i][j] - dot(&q[i], &k[j])).abs() < 1e-9);
                assert!((scores[i][j] - s0[i][j]).abs() < 1e-9);
            }
            for c in 0..16 {
                assert!((outs[i][c] - o0[i][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_token_score_matches_rotary_form() {
        let layout = RepLayout::new(4, LayoutKind::Spatial, 1, 1).unwrap();
        let mk = |h: f64, w: f64| GeomAttr {
            theta_h: h,
            theta_w: w,
            extra: AttrExtra::Time(0.0),
        };
        let (ti, tj) = (0.4, 2.1);
        let attrs = [mk(ti, 0.0), mk(tj, 0.0)];
        let q = vec![vec![0.3, -0.7, 0.0, 0.0]; 2];
        let k = vec![vec![1.1, 0.5, 0.0, 0.0]; 2];
        let (scores, _) = gta_attention(&q, &k, &k, &attrs, &layout, true).unwrap();
        // qᵀ Rot(θj − θi) k
        let a = tj - ti;
        let rk = [a.cos() * 1.1 - a.sin() * 0.5, a.sin() * 1.1 + a.cos() * 0.5];
        let want = 0.3 * rk[0] - 0.7 * rk[1];
        assert!((scores[0][1] - want).abs() < 1e-12);
    }

    #[test]
    fn mixed_modes_do_not_compose() {
        let a = GeomAttr::identity(AttrMode::ThreeD);
        let b = GeomAttr::identity(AttrMode::Video);
        assert!(a.compose(&b).is_err());
    }
}
