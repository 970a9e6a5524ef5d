//! Deterministic synthetic data: a tiny raycaster over procedurally generated
//! scenes of lambertian spheres and axis-aligned boxes.
//!
//! World frame: y up. Cameras use the pose convention of
//! [`crate::geometry`] (camera-to-world, x right, y down, z forward) and a
//! fixed pinhole with a 50° vertical field of view.

mod dataset;

pub use dataset::{Dataset, DatasetMode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{dot3, norm3, normalize, orbit_pose, CameraPose, PoseSet, Vec3};
use crate::image::Image;
use crate::net::ViewAttr;
use crate::{Error, Result};

pub const FOV_Y_DEG: f64 = 50.0;
pub const AMBIENT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box with the given half extents.
    Box { half: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub albedo: Vec3,
}

impl Primitive {
    /// Distance from the origin to the farthest point of the primitive.
    pub fn extent(&self) -> f64 {
        norm3(&self.center)
            + match self.shape {
                Shape::Sphere { radius } => radius,
                Shape::Box { half } => norm3(&half),
            }
    }

    /// Nearest hit `(distance, normal)` along a unit-direction ray.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        let oc = [o[0] - self.center[0], o[1] - self.center[1], o[2] - self.center[2]];
        match self.shape {
            Shape::Sphere { radius } => {
                let b = dot3(&oc, d);
                let c = dot3(&oc, &oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
                if t <= 1e-9 {
                    return None;
                }
                let p = [oc[0] + t * d[0], oc[1] + t * d[1], oc[2] + t * d[2]];
                Some((t, [p[0] / radius, p[1] / radius, p[2] / radius]))
            }
            Shape::Box { half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis_in = 0;
                let mut sign_in = 0.0;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if oc[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / d[a];
                    let (mut ta, mut tb) = ((-half[a] - oc[a]) * inv, (half[a] - oc[a]) * inv);
                    let mut s = -1.0;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        s = 1.0;
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis_in = a;
                        sign_in = s;
                    }
                    t1 = t1.min(tb);
                }
                if t0 > t1 || t0 <= 1e-9 {
                    return None;
                }
                let mut n = [0.0; 3];
                n[axis_in] = sign_in;
                Some((t0, n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub background: Vec3,
    /// Unit direction towards the light.
    pub light: Vec3,
}

impl SceneSpec {
    pub fn empty(background: Vec3) -> Self {
        Self {
            seed: 0,
            primitives: Vec::new(),
            background,
            light: [0.0, 1.0, 0.0],
        }
    }

    /// 1–4 random primitives inside the unit ball.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5CE9E);
        let count = rng.random_range(1..=4);
        let mut primitives = Vec::with_capacity(count);
        for _ in 0..count {
            let shape = if rng.random_bool(0.5) {
                Shape::Sphere {
                    radius: rng.random_range(0.2..0.45),
                }
            } else {
                Shape::Box {
                    half: [
                        rng.random_range(0.12..0.3),
                        rng.random_range(0.12..0.3),
                        rng.random_range(0.12..0.3),
                    ],
                }
            };
            let size = match shape {
                Shape::Sphere { radius } => radius,
                Shape::Box { half } => norm3(&half),
            };
            // centre direction uniform on the sphere, radius leaving room for the shape
            let dir = loop {
                let v = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                let n = norm3(&v);
                if n > 1e-3 && n <= 1.0 {
                    break normalize(v).expect("non-zero");
                }
            };
            let r = rng.random_range(0.0..(1.0 - size).max(0.0));
            let albedo = [
                rng.random_range(0.15..1.0),
                rng.random_range(0.15..1.0),
                rng.random_range(0.15..1.0),
            ];
            primitives.push(Primitive {
                shape,
                center: [dir[0] * r, dir[1] * r, dir[2] * r],
                albedo,
            });
        }
        let g = rng.random_range(0.0..0.35);
        let background = [g + rng.random_range(0.0..0.1), g + rng.random_range(0.0..0.1), g + rng.random_range(0.0..0.1)];
        let light = normalize([
            rng.random_range(-0.8..0.8),
            rng.random_range(0.5..1.0),
            rng.random_range(-0.8..0.8),
        ])
        .expect("non-zero light");
        Self {
            seed,
            primitives,
            background,
            light,
        }
    }
}

/// Renders `scene` seen from `pose` at `height × width`, values in `[−1, 1]`.
pub fn render(scene: &SceneSpec, pose: &CameraPose, height: usize, width: usize) -> Image<f32> {
    let focal = 0.5 * height as f64 / (0.5 * FOV_Y_DEG.to_radians()).tan();
    let origin = pose.translation();
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let cam = [
                (x as f64 + 0.5 - 0.5 * width as f64) / focal,
                (y as f64 + 0.5 - 0.5 * height as f64) / focal,
                1.0,
            ];
            let dir = normalize(pose.transform_dir(&cam)).expect("non-zero ray");
            let mut best: Option<(f64, Vec3, Vec3)> = None;
            for p in &scene.primitives {
                if let Some((t, n)) = p.intersect(&origin, &dir) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, n, p.albedo));
                    }
                }
            }
            let rgb = match best {
                Some((_, n, albedo)) => {
                    let lambert = dot3(&n, &scene.light).max(0.0);
                    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
                    [albedo[0] * k, albedo[1] * k, albedo[2] * k]
                }
                None => scene.background,
            };
            data.extend(rgb.iter().map(|c| (2.0 * c - 1.0) as f32));
        }
    }
    Image {
        height,
        width,
        channels: 3,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    ThreeD,
    Video,
}

/// Rendered views of one scene plus their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub mode: SampleMode,
    pub images: Vec<Image<f32>>,
    /// Camera poses in scene units (3D and video both record them; video
    /// samples expose only frame indices to the model).
    pub poses: PoseSet,
}

impl Sample {
    pub fn views(&self) -> usize {
        self.images.len()
    }

    /// Per-view attributes seen by the network: normalised poses (3D) or
    /// frame indices (video).
    pub fn attrs(&self) -> Result<Vec<ViewAttr>> {
        self.attrs_of(&(0..self.views()).collect::<Vec<_>>())
    }

    /// Attributes of a subset of views. Poses are normalised over the whole
    /// scene so a subset sees the same geometry as the full set.
    pub fn attrs_of(&self, views: &[usize]) -> Result<Vec<ViewAttr>> {
        let n = self.views();
        if let Some(&bad) = views.iter().find(|&&v| v >= n) {
            return Err(Error::IndexOutOfRange { index: bad, size: n });
        }
        Ok(match self.mode {
            SampleMode::ThreeD => {
                let norm = self.poses.normalize_translations()?;
                views.iter().map(|&v| ViewAttr::Pose(norm.poses[v])).collect()
            }
            SampleMode::Video => views.iter().map(|&v| ViewAttr::Frame { index: v, count: n }).collect(),
        })
    }
}

fn check_views(views: usize) -> Result<()> {
    if views < 2 {
        return Err(Error::invalid(format!("a sample needs at least 2 views, got {views}")));
    }
    Ok(())
}

/// Random scene seen from `views` cameras at random azimuths, elevations in
/// `[−20°, 40°]` and one scene-wide distance in `[2.6, 3.4]`.
pub fn make_3d_sample(seed: u64, views: usize, res: usize) -> Result<Sample> {
    check_views(views)?;
    let scene = SceneSpec::random(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0CA3_E3A5);
    let radius = rng.random_range(2.6..3.4);
    let mut poses = Vec::with_capacity(views);
    for _ in 0..views {
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el = rng.random_range(-20.0f64..40.0).to_radians();
        poses.push(orbit_pose(az, el, radius)?);
    }
    let images = poses.iter().map(|p| render(&scene, p, res, res)).collect();
    Ok(Sample {
        seed,
        mode: SampleMode::ThreeD,
        images,
        poses: PoseSet::new(poses),
    })
}

/// A smooth camera sweep around a random scene: azimuth advances by a total
/// of 60°–150° while elevation and distance drift sinusoidally.
pub fn make_video_sample(seed: u64, views: usize, res: usize) -> Result<Sample> {
    check_views(views)?;
    let scene = SceneSpec::random(seed ^ 0x7_1DE0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF11_3A5);
    let az0 = rng.random_range(0.0..std::f64::consts::TAU);
    let sweep = rng.random_range(60.0f64..150.0).to_radians() * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let el0 = rng.random_range(-10.0f64..30.0).to_radians();
    let el_amp = rng.random_range(0.0f64..10.0).to_radians();
    let r0 = rng.random_range(2.7..3.3);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut poses = Vec::with_capacity(views);
    for f in 0..views {
        let s = f as f64 / (views - 1) as f64;
        let az = az0 + sweep * s;
        let el = el0 + el_amp * (std::f64::consts::PI * s + phase).sin();
        let r = r0 + 0.15 * (std::f64::consts::PI * s + phase).cos();
        poses.push(orbit_pose(az, el, r)?);
    }
    let images = poses.iter().map(|p| render(&scene, p, res, res)).collect();
    Ok(Sample {
        seed,
        mode: SampleMode::Video,
        images,
        poses: PoseSet::new(poses),
    })
}
