//! Rigid camera poses.
//!
//! Poses are **camera-to-world** transforms: a point `x_cam` in the camera
//! frame maps to `R · x_cam + t` in the world, so `t` is the camera centre.
//! The camera frame follows the OpenCV convention (x right, y down, z
//! forward). The relative transform between two cameras is
//! `inverse(a) · b`.
//!
//! Pose files hold one pose per line: twelve whitespace-separated decimals,
//! the rotation row-major followed by the translation. Blank lines and text
//! after `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];
pub type Mat4 = [[f64; 4]; 4];

/// Drift below which a rotation is accepted as-is.
const EXACT_DRIFT: f64 = 1e-12;
/// Drift above which a matrix is rejected rather than re-orthonormalised.
const MAX_REPAIRABLE_DRIFT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    r: Mat3,
    t: Vec3,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    /// Builds a pose, repairing small rotation drift by polar decomposition.
    pub fn new(r: Mat3, t: Vec3) -> Result<Self> {
        if r.iter().flatten().chain(t.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let drift = orthonormality_error(&r);
        let r = if drift <= EXACT_DRIFT {
            r
        } else if drift <= MAX_REPAIRABLE_DRIFT {
            polar_rotation(&r)
        } else {
            return Err(Error::InvalidPose(format!("rotation drift {drift:.3e} too large")));
        };
        if det3(&r) <= 0.0 {
            return Err(Error::InvalidPose("rotation has non-positive determinant".into()));
        }
        Ok(Self { r, t })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { t, ..Self::identity() }
    }

    /// Rotation about the z axis by `angle` radians with zero translation.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            r: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.r
    }

    pub fn translation(&self) -> Vec3 {
        self.t
    }

    pub fn with_translation(mut self, t: Vec3) -> Self {
        self.t = t;
        self
    }

    /// Homogeneous 4×4 matrix `[R t; 0 1]`.
    pub fn matrix(&self) -> Mat4 {
        let r = &self.r;
        let t = &self.t;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Rows of the 4×4 matrix as a flat row-major array.
    pub fn matrix_flat(&self) -> [f64; 16] {
        flatten4(&self.matrix())
    }

    /// `self · other`.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        let r = mul3(&self.r, &other.r);
        let rt = apply3(&self.r, &other.t);
        CameraPose {
            r,
            t: [rt[0] + self.t[0], rt[1] + self.t[1], rt[2] + self.t[2]],
        }
    }

    /// `[Rᵀ −Rᵀt; 0 1]`.
    pub fn inverse(&self) -> CameraPose {
        let rt = transpose3(&self.r);
        let t = apply3(&rt, &self.t);
        CameraPose { r: rt, t: [-t[0], -t[1], -t[2]] }
    }

    /// Transform of `other` expressed in this camera's frame: `self⁻¹ · other`.
    pub fn relative_to(&self, other: &CameraPose) -> CameraPose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        let q = apply3(&self.r, p);
        [q[0] + self.t[0], q[1] + self.t[1], q[2] + self.t[2]]
    }

    pub fn transform_dir(&self, d: &Vec3) -> Vec3 {
        apply3(&self.r, d)
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        [self.r[0][2], self.r[1][2], self.r[2][2]]
    }

    /// Camera at `eye` looking at `target`, with `up` resolving the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let f = normalize(sub3(&target, &eye))
            .ok_or_else(|| Error::InvalidPose("eye coincides with target".into()))?;
        let right = match normalize(cross(&f, &up)) {
            Some(r) => r,
            // looking along `up`: pick any perpendicular axis
            None => {
                let alt = if f[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
                normalize(cross(&f, &alt)).expect("non-parallel fallback axis")
            }
        };
        let down = cross(&f, &right);
        let r = [
            [right[0], down[0], f[0]],
            [right[1], down[1], f[1]],
            [right[2], down[2], f[2]],
        ];
        Self::new(r, eye)
    }

    pub fn max_abs_diff(&self, other: &CameraPose) -> f64 {
        let a = self.matrix_flat();
        let b = other.matrix_flat();
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Uniformly random rotation with a Gaussian translation of scale `t_scale`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, t_scale: f64) -> Self {
        let t = [
            rng.sample::<f64, _>(StandardNormal) * t_scale,
            rng.sample::<f64, _>(StandardNormal) * t_scale,
            rng.sample::<f64, _>(StandardNormal) * t_scale,
        ];
        Self { r: random_rotation(rng), t }
    }
}

/// Ordered poses of one scene, optionally normalised so the farthest camera
/// sits at unit distance from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet {
    pub poses: Vec<CameraPose>,
    pub normalized: bool,
}

impl PoseSet {
    pub fn new(poses: Vec<CameraPose>) -> Self {
        Self { poses, normalized: false }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn max_translation_norm(&self) -> f64 {
        self.poses.iter().map(|p| norm3(&p.t)).fold(0.0, f64::max)
    }

    /// Scales every translation by `1 / max‖t‖`. Rotations are untouched and
    /// an all-zero set is returned unchanged (with the flag set).
    pub fn normalize_translations(&self) -> Result<PoseSet> {
        if self.poses.is_empty() {
            return Err(Error::EmptyPoseSet);
        }
        let max = self.max_translation_norm();
        let poses = if max > 0.0 {
            self.poses
                .iter()
                .map(|p| p.with_translation([p.t[0] / max, p.t[1] / max, p.t[2] / max]))
                .collect()
        } else {
            self.poses.clone()
        };
        Ok(PoseSet { poses, normalized: true })
    }

    pub fn read(path: &Path) -> Result<PoseSet> {
        let text = std::fs::read_to_string(path)?;
        parse_poses(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, format_poses(&self.poses))?;
        Ok(())
    }
}

/// Cameras on a sphere of `radius` looking at the origin: one ring of `n`
/// uniformly spaced azimuths per elevation (degrees). Azimuth 0 sits on +z.
pub fn orbit_poses(n: usize, radius: f64, elevations_deg: &[f64]) -> Result<PoseSet> {
    if n == 0 || elevations_deg.is_empty() {
        return Err(Error::EmptyPoseSet);
    }
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("orbit radius must be positive, got {radius}")));
    }
    let mut poses = Vec::with_capacity(n * elevations_deg.len());
    for &elev in elevations_deg {
        for k in 0..n {
            let az = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            poses.push(orbit_pose(az, elev.to_radians(), radius)?);
        }
    }
    Ok(PoseSet::new(poses))
}

/// Single orbit camera at azimuth/elevation (radians), world up = +y.
pub fn orbit_pose(azimuth: f64, elevation: f64, radius: f64) -> Result<CameraPose> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    let eye = [radius * ce * sa, radius * se, radius * ce * ca];
    CameraPose::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0])
}

pub fn parse_poses(text: &str, source_name: &str) -> Result<PoseSet> {
    let mut poses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: lineno + 1,
            message,
        };
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| err(format!("bad number {tok:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 12 {
            return Err(err(format!("expected 12 values, found {}", vals.len())));
        }
        let r = [
            [vals[0], vals[1], vals[2]],
            [vals[3], vals[4], vals[5]],
            [vals[6], vals[7], vals[8]],
        ];
        let pose = CameraPose::new(r, [vals[9], vals[10], vals[11]]).map_err(|e| err(e.to_string()))?;
        poses.push(pose);
    }
    Ok(PoseSet::new(poses))
}

pub fn format_poses(poses: &[CameraPose]) -> String {
    let mut out = String::from("# r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for p in poses {
        let vals = p.r.iter().flatten().chain(p.t.iter());
        let line: Vec<String> = vals.map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Uniform random rotation from a normalised Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for x in q.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            q.iter_mut().for_each(|x| *x /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `‖RᵀR − I‖_∞` (max-abs entry).
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let rtr = mul3(&transpose3(r), r);
    let mut e: f64 = 0.0;
    for (i, row) in rtr.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let id = if i == j { 1.0 } else { 0.0 };
            e = e.max((v - id).abs());
        }
    }
    e
}

/// Orthogonal polar factor via the Newton iteration `X ← (X + X⁻ᵀ)/2`.
fn polar_rotation(m: &Mat3) -> Mat3 {
    let mut x = *m;
    for _ in 0..50 {
        let Some(inv) = inverse3(&x) else { break };
        let inv_t = transpose3(&inv);
        let mut next = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = 0.5 * (x[i][j] + inv_t[i][j]);
            }
        }
        let delta = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (next[i][j] - x[i][j]).abs())
            .fold(0.0, f64::max);
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    x
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &Mat3) -> Option<Mat3> {
    let d = det3(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, e) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) / d;
        }
    }
    Some(inv)
}

pub fn mul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn transpose3(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn apply3(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn mul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn flatten4(m: &Mat4) -> [f64; 16] {
    let mut out = [0.0; 16];
    for i in 0..4 {
        out[i * 4..i * 4 + 4].copy_from_slice(&m[i]);
    }
    out
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm3(&a);
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn assert_valid(p: &CameraPose) {
        assert!(orthonormality_error(p.rotation()) < 1e-9);
        assert!((det3(p.rotation()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_and_inverse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CameraPose::random(&mut rng, 2.0);
        assert!(CameraPose::identity().compose(&p).max_abs_diff(&p) < 1e-15);
        assert!(p.compose(&p.inverse()).max_abs_diff(&CameraPose::identity()) < 1e-9);
        assert!(p.inverse().inverse().max_abs_diff(&p) < 1e-12);
        assert_eq!(CameraPose::identity().inverse(), CameraPose::identity());
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let q = CameraPose::rot_z(PI / 2.0);
        let got = q.compose(&q);
        // 4×4 product oracle
        let want = mul4(&q.matrix(), &q.matrix());
        let got_m = got.matrix();
        for i in 0..4 {
            for j in 0..4 {
                assert!((got_m[i][j] - want[i][j]).abs() < 1e-12);
            }
        }
        assert!(got.max_abs_diff(&CameraPose::rot_z(PI)) < 1e-12);
    }

    #[test]
    fn inverse_of_pure_translation() {
        let p = CameraPose::from_translation([1.0, 2.0, 3.0]);
        assert_eq!(p.inverse().translation(), [-1.0, -2.0, -3.0]);
    }

    #[test]
    fn group_laws_hold_on_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = CameraPose::random(&mut rng, 3.0);
            let b = CameraPose::random(&mut rng, 3.0);
            let c = CameraPose::random(&mut rng, 3.0);
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!(l.max_abs_diff(&r) < 1e-9);
            let m = mul4(&a.matrix(), &b.matrix());
            let ab = a.compose(&b).matrix();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((m[i][j] - ab[i][j]).abs() < 1e-9);
                }
            }
            assert_valid(&a.compose(&b));
        }
    }

    #[test]
    fn construction_repairs_small_drift_and_rejects_garbage() {
        let mut r = *CameraPose::rot_z(0.3).rotation();
        r[0][0] += 1e-7;
        let p = CameraPose::new(r, [0.0; 3]).unwrap();
        assert_valid(&p);
        assert!((p.rotation()[0][0] - (0.3f64).cos()).abs() < 1e-6);

        let bad = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraPose::new(bad, [0.0; 3]).is_err());
        let reflect = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraPose::new(reflect, [0.0; 3]).is_err());
    }

    #[test]
    fn normalization_examples() {
        let set = PoseSet::new(vec![
            CameraPose::from_translation([0.0, 0.0, 2.0]),
            CameraPose::from_translation([0.0, 0.0, 1.0]),
        ]);
        let n = set.normalize_translations().unwrap();
        assert!(n.normalized);
        assert_eq!(n.poses[0].translation(), [0.0, 0.0, 1.0]);
        assert_eq!(n.poses[1].translation(), [0.0, 0.0, 0.5]);

        let zeros = PoseSet::new(vec![CameraPose::rot_z(0.4); 3]);
        let nz = zeros.normalize_translations().unwrap();
        assert_eq!(nz.poses, zeros.poses);
        assert!(nz.normalized);

        assert!(matches!(PoseSet::new(vec![]).normalize_translations(), Err(Error::EmptyPoseSet)));
    }

    #[test]
    fn normalization_random_sets_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let set = PoseSet::new((0..7).map(|_| CameraPose::random(&mut rng, 5.0)).collect());
            let n = set.normalize_translations().unwrap();
            // recompute max norm independently
            let max = n
                .poses
                .iter()
                .map(|p| {
                    let t = p.translation();
                    (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()
                })
                .fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-9);
            for (a, b) in set.poses.iter().zip(&n.poses) {
                assert_eq!(a.rotation(), b.rotation());
            }
            let nn = n.normalize_translations().unwrap();
            for (a, b) in n.poses.iter().zip(&nn.poses) {
                assert!(a.max_abs_diff(b) < 1e-12);
            }
        }
    }

    #[test]
    fn orbit_examples() {
        let ring = orbit_poses(4, 2.5, &[0.0]).unwrap();
        assert_eq!(ring.len(), 4);
        for (k, p) in ring.poses.iter().enumerate() {
            assert!((norm3(&p.translation()) - 2.5).abs() < 1e-12);
            let t = p.translation();
            let az = t[0].atan2(t[2]).rem_euclid(2.0 * PI);
            assert!((az - k as f64 * PI / 2.0).abs() < 1e-9, "azimuth {az}");
        }
        let rings = orbit_poses(12, 3.0, &[-30.0, 0.0, 30.0]).unwrap();
        assert_eq!(rings.len(), 36);
        for p in &rings.poses {
            assert_valid(p);
            // forward axis scaled by the radius lands on the origin
            let f = p.forward();
            let t = p.translation();
            let res = [t[0] + 3.0 * f[0], t[1] + 3.0 * f[1], t[2] + 3.0 * f[2]];
            assert!(norm3(&res) < 1e-6);
        }
        assert!(matches!(orbit_poses(0, 1.0, &[0.0]), Err(Error::EmptyPoseSet)));
        assert!(orbit_poses(3, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn look_at_straight_up_is_still_valid() {
        let p = CameraPose::look_at([0.0, 2.0, 0.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        assert_valid(&p);
        assert!((p.forward()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_file_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poses: Vec<_> = (0..5).map(|_| CameraPose::random(&mut rng, 1.0)).collect();
        let text = format!("# header\n\n{}", format_poses(&poses));
        let parsed = parse_poses(&text, "mem").unwrap();
        for (a, b) in poses.iter().zip(&parsed.poses) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
        let err = parse_poses("1 0 0 0 1 0 0 0 1 0 0\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_poses("1 0 0 0 1 0 0 0 1 0 0 x\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let ok = parse_poses("1 0 0 0 1 0 0 0 1 0 0 5 # comment\n", "mem").unwrap();
        assert_eq!(ok.poses[0].translation(), [0.0, 0.0, 5.0]);
    }
}
