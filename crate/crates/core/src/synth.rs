//! Seeded synthetic scenes and sequences standing in for a trained backbone.
//!
//! A scene is a set of box-shaped things instances (optionally arranged in
//! tight groups or rows), a ground plane and vegetation blobs. Things points
//! are sampled on the box surface with a count drawn from a range-dependent
//! density curve. Regressed centers are the true box center plus a strip of
//! uniform noise along the instance heading, whose standard deviation is
//! `elongation * length`, plus isotropic Gaussian jitter.
//!
//! Per-point features (`FEATURE_DIM` = 8 columns):
//!
//! | col | meaning |
//! |-----|---------|
//! | 0 | range of the point in meters |
//! | 1 | `ln(1 + n)`, `n` = things points within 1 m of the point |
//! | 2 | RMS distance to their mean of the things points within 2 m |
//! | 3 | offset length `|C - P|` |
//! | 4 | `ln(1 + n)`, `n` = regressed centers within 0.5 m of `C` |
//! | 5 | RMS distance to their mean of the regressed centers within 2 m of `C` |
//! | 6 | height `z` |
//! | 7 | intensity |
//!
//! Rows of non-things points carry only columns 0, 6 and 7; the rest are 0.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::geom::{self, GridIndex};
use crate::temporal::{overlapped_center_targets, FusedWindow, WindowRegressor};
use crate::{ClassConfig, ClassId, Error, Frame, InstanceId, Matrix, Point, Pose, Result, Vec3};

pub const FEATURE_DIM: usize = 8;

/// Piecewise-linear visible point density (points per m²) over sensor range.
///
/// Knot ranges strictly increase; values are non-negative, non-increasing
/// and the first is positive. The curve is flat beyond its end knots.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityCurve {
    pub knots: Vec<(f64, f64)>,
}

impl DensityCurve {
    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        if k.is_empty() || !(k[0].1 > 0.0) {
            return Err(Error::InvalidConfig("density curve is zero at every range".into()));
        }
        for w in k.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 > w[0].1 || w[1].1 < 0.0 {
                return Err(Error::InvalidConfig(
                    "density curve must have increasing ranges and non-increasing values".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn at(&self, range: f64) -> f64 {
        let k = &self.knots;
        if range <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if range <= w[1].0 {
                let t = (range - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + t * (w[1].1 - w[0].1);
            }
        }
        k[k.len() - 1].1
    }
}

/// How the instances of one template are arranged.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "layout", rename_all = "snake_case"))]
pub enum GroupLayout {
    Single,
    /// Members on a two-column grid with center spacing `spacing`.
    Cluster { size: (usize, usize), spacing: f64 },
    /// Members bumper to bumper along a shared heading.
    Row { size: (usize, usize), gap: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassTemplate {
    pub class: ClassId,
    pub name: String,
    /// Box length range in meters; this is the instance extent.
    pub length: (f64, f64),
    /// Width as a fraction of length.
    pub width_ratio: f64,
    pub height: (f64, f64),
    /// Inclusive range of the instance count per scene.
    pub count: (usize, usize),
    /// Speed along the heading in m/frame.
    pub speed: (f64, f64),
    pub layout: GroupLayout,
    /// Minimum free gap in meters around each group.
    pub clearance: f64,
    /// Sensor range interval for group anchors; defaults to the scene's.
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "shape", rename_all = "snake_case"))]
pub enum StuffShape {
    /// Flat ground at the scene's ground height, thinned with the density curve.
    Ground { points: usize },
    /// Static hemispherical blobs.
    Blobs {
        count: (usize, usize),
        radius: (f64, f64),
        points: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StuffTemplate {
    pub class: ClassId,
    pub shape: StuffShape,
}

/// Regressed-center noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseModel {
    /// Strip standard deviation along the heading, as a fraction of length.
    pub elongation: f64,
    /// Isotropic Gaussian standard deviation in meters.
    pub jitter: f64,
}

impl NoiseModel {
    pub const NONE: Self = Self {
        elongation: 0.0,
        jitter: 0.0,
    };
}

/// Ego trajectory: constant speed along the current yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EgoMotion {
    /// Meters per frame.
    pub speed: f64,
    /// Radians per frame.
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneSpec {
    pub things: Vec<ClassTemplate>,
    pub stuff: Vec<StuffTemplate>,
    pub min_range: f64,
    pub sensor_range: f64,
    pub ground_z: f64,
    pub density: DensityCurve,
    pub noise: NoiseModel,
    pub ego: EgoMotion,
    pub seed: u64,
}

impl SceneSpec {
    /// Mixed-size benchmark: tight person groups, car rows and long trucks,
    /// so no single bandwidth suits every class.
    pub fn mixed_size(seed: u64) -> Self {
        let t = |class, name: &str, length, width_ratio, height, count, layout, clearance, range| ClassTemplate {
            class,
            name: name.into(),
            length,
            width_ratio,
            height,
            count,
            speed: (0.0, 0.0),
            layout,
            clearance,
            range,
        };
        Self {
            things: vec![
                t(
                    1,
                    "person",
                    (0.4, 0.6),
                    1.0,
                    (1.6, 1.9),
                    (4, 8),
                    GroupLayout::Cluster {
                        size: (2, 4),
                        spacing: 1.0,
                    },
                    2.5,
                    Some((4.0, 20.0)),
                ),
                t(
                    2,
                    "car",
                    (1.8, 2.2),
                    0.5,
                    (1.3, 1.6),
                    (3, 6),
                    GroupLayout::Row {
                        size: (2, 3),
                        gap: (0.8, 1.0),
                    },
                    2.5,
                    Some((5.0, 30.0)),
                ),
                t(
                    3,
                    "truck",
                    (9.0, 11.0),
                    0.25,
                    (3.0, 3.8),
                    (1, 2),
                    GroupLayout::Single,
                    4.0,
                    Some((8.0, 35.0)),
                ),
            ],
            stuff: vec![
                StuffTemplate {
                    class: 4,
                    shape: StuffShape::Ground { points: 1500 },
                },
                StuffTemplate {
                    class: 5,
                    shape: StuffShape::Blobs {
                        count: (2, 4),
                        radius: (1.0, 2.5),
                        points: 150,
                    },
                },
            ],
            min_range: 3.0,
            sensor_range: 40.0,
            ground_z: -1.7,
            density: DensityCurve {
                knots: vec![(0.0, 40.0), (10.0, 40.0), (20.0, 20.0), (30.0, 12.0), (40.0, 8.0), (50.0, 5.0)],
            },
            noise: NoiseModel {
                elongation: 0.15,
                jitter: 0.05,
            },
            ego: EgoMotion::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.density.validate()?;
        if !(self.min_range >= 0.0 && self.sensor_range > self.min_range) {
            return Err(Error::InvalidConfig("sensor range must exceed min range".into()));
        }
        if self.noise.elongation < 0.0 || self.noise.jitter < 0.0 {
            return Err(Error::InvalidConfig("noise scales must be non-negative".into()));
        }
        for t in &self.things {
            let bad = |(a, b): (f64, f64)| !(a > 0.0 && b >= a);
            if bad(t.length) || bad(t.height) || !(t.width_ratio > 0.0) {
                return Err(Error::InvalidConfig(format!("class {} needs positive extents", t.name)));
            }
            if t.count.0 > t.count.1 || t.speed.0 > t.speed.1 || t.clearance < 0.0 {
                return Err(Error::InvalidConfig(format!("class {} has an empty range", t.name)));
            }
            if let Some((a, b)) = t.range {
                if !(b > a && a >= 0.0) {
                    return Err(Error::InvalidConfig(format!("class {} has an empty range", t.name)));
                }
            }
        }
        Ok(())
    }

    /// Registry matching this spec's class ids, with a 10-point instance minimum.
    pub fn class_config(&self) -> ClassConfig {
        ClassConfig::synthetic()
    }
}

/// Ground-truth box of one instance in sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InstanceBox {
    pub id: InstanceId,
    pub class: ClassId,
    pub center: Vec3,
    /// Yaw of the length axis.
    pub heading: f64,
    /// Length, width, height.
    pub size: Vec3,
    /// Sensor-frame velocity in m/frame.
    pub velocity: Vec3,
}

impl InstanceBox {
    pub fn axis(&self) -> Vec3 {
        [libm::cos(self.heading), libm::sin(self.heading), 0.0]
    }

    fn contains_xy(&self, p: &Vec3, margin: f64) -> bool {
        let d = geom::sub(p, &self.center);
        let (c, s) = (libm::cos(self.heading), libm::sin(self.heading));
        let u = c * d[0] + s * d[1];
        let v = -s * d[0] + c * d[1];
        libm::fabs(u) <= self.size[0] / 2.0 + margin && libm::fabs(v) <= self.size[1] / 2.0 + margin
    }
}

/// One generated scan with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Carries semantics, instance ids and the ego pose.
    pub frame: Frame,
    pub boxes: Vec<InstanceBox>,
}

/// World-frame layout shared by all frames of a sequence.
#[derive(Debug, Clone)]
struct Layout {
    instances: Vec<InstanceBox>,
    blobs: Vec<(ClassId, Vec3, f64, usize)>,
}

fn uniform(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if b > a {
        rng.random_range(a..b)
    } else {
        a
    }
}

fn count(rng: &mut ChaCha8Rng, (a, b): (usize, usize)) -> usize {
    rng.random_range(a..=b.max(a))
}

fn rotate_xy(v: &Vec3, yaw: f64) -> Vec3 {
    let (c, s) = (libm::cos(yaw), libm::sin(yaw));
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn layout(spec: &SceneSpec) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // (xy center, radius) of every placed group, blob included
    let mut occupied: Vec<(Vec3, f64)> = Vec::new();
    let mut instances = Vec::new();
    let mut next_id: InstanceId = 1;
    let free = |occupied: &[(Vec3, f64)], c: &Vec3, r: f64| {
        occupied.iter().all(|(o, orad)| libm::sqrt(geom::dist2(o, c)) >= r + orad)
    };
    for t in &spec.things {
        let (rmin, rmax) = t.range.unwrap_or((spec.min_range, spec.sensor_range));
        let mut remaining = count(&mut rng, t.count);
        while remaining > 0 {
            let members = match t.layout {
                GroupLayout::Single => 1,
                GroupLayout::Cluster { size, .. } | GroupLayout::Row { size, .. } => count(&mut rng, size).max(1),
            }
            .min(remaining);
            remaining -= members;
            let heading = rng.random_range(-PI..PI);
            let speed = uniform(&mut rng, t.speed);
            let sizes: Vec<Vec3> = (0..members)
                .map(|_| {
                    let l = uniform(&mut rng, t.length);
                    [l, l * t.width_ratio, uniform(&mut rng, t.height)]
                })
                .collect();
            // member offsets in the group frame, x along the heading
            let mut offsets: Vec<Vec3> = Vec::with_capacity(members);
            let mut headings = Vec::with_capacity(members);
            match t.layout {
                GroupLayout::Single => {
                    offsets.push([0.0; 3]);
                    headings.push(heading);
                }
                GroupLayout::Cluster { spacing, .. } => {
                    for k in 0..members {
                        let jx = rng.random_range(-0.05..0.05);
                        let jy = rng.random_range(-0.05..0.05);
                        offsets.push([(k % 2) as f64 * spacing + jx, (k / 2) as f64 * spacing + jy, 0.0]);
                        headings.push(rng.random_range(-PI..PI));
                    }
                }
                GroupLayout::Row { gap, .. } => {
                    let mut x = 0.0;
                    for k in 0..members {
                        if k > 0 {
                            x += (sizes[k - 1][0] + sizes[k][0]) / 2.0 + uniform(&mut rng, gap);
                        }
                        offsets.push([x, 0.0, 0.0]);
                        headings.push(heading);
                    }
                }
            }
            let mid = offsets.iter().fold([0.0; 3], |a, o| geom::add(&a, o));
            let mid = [mid[0] / members as f64, mid[1] / members as f64, 0.0];
            let radius = offsets
                .iter()
                .zip(&sizes)
                .map(|(o, s)| geom::dist(o, &mid) + libm::hypot(s[0], s[1]) / 2.0)
                .fold(0.0, f64::max)
                + t.clearance / 2.0;
            let mut placed = None;
            for _ in 0..200 {
                let r = libm::sqrt(uniform(&mut rng, (rmin * rmin, rmax * rmax)));
                let az = rng.random_range(-PI..PI);
                let anchor = [r * libm::cos(az), r * libm::sin(az), 0.0];
                if free(&occupied, &anchor, radius) {
                    placed = Some(anchor);
                    break;
                }
            }
            let Some(anchor) = placed else { continue };
            occupied.push((anchor, radius));
            let dir = [libm::cos(heading), libm::sin(heading), 0.0];
            for k in 0..members {
                let local = rotate_xy(&geom::sub(&offsets[k], &mid), heading);
                let c = geom::add(&anchor, &local);
                instances.push(InstanceBox {
                    id: next_id,
                    class: t.class,
                    center: [c[0], c[1], spec.ground_z + sizes[k][2] / 2.0],
                    heading: headings[k],
                    size: sizes[k],
                    velocity: [speed * dir[0], speed * dir[1], 0.0],
                });
                next_id += 1;
            }
        }
    }
    let mut blobs = Vec::new();
    for s in &spec.stuff {
        if let StuffShape::Blobs { count: n, radius, points } = s.shape {
            for _ in 0..count(&mut rng, n) {
                let rad = uniform(&mut rng, radius);
                for _ in 0..200 {
                    let r = libm::sqrt(uniform(&mut rng, (spec.min_range * spec.min_range, spec.sensor_range * spec.sensor_range)));
                    let az = rng.random_range(-PI..PI);
                    let c = [r * libm::cos(az), r * libm::sin(az), spec.ground_z];
                    if free(&occupied, &c, rad + 1.0) {
                        occupied.push((c, rad + 1.0));
                        blobs.push((s.class, c, rad, points));
                        break;
                    }
                }
            }
        }
    }
    Layout { instances, blobs }
}

fn ego_pose(ego: &EgoMotion, t: usize) -> Pose {
    let mut pos = [0.0; 3];
    for k in 0..t {
        let yaw = ego.yaw_rate * k as f64;
        pos[0] += ego.speed * libm::cos(yaw);
        pos[1] += ego.speed * libm::sin(yaw);
    }
    Pose::from_yaw(ego.yaw_rate * t as f64, pos)
}

/// Uniform sample on the five visible faces (all but the bottom) of a box.
fn sample_box_surface(rng: &mut ChaCha8Rng, b: &InstanceBox) -> Vec3 {
    let [l, w, h] = b.size;
    let areas = [l * w, l * h, l * h, w * h, w * h];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut face = 0;
    while face < 4 && pick >= areas[face] {
        pick -= areas[face];
        face += 1;
    }
    let u = rng.random_range(-0.5..0.5);
    let v = rng.random_range(-0.5..0.5);
    let local = match face {
        0 => [u * l, v * w, h / 2.0],
        1 => [u * l, w / 2.0, v * h],
        2 => [u * l, -w / 2.0, v * h],
        3 => [l / 2.0, u * w, v * h],
        _ => [-l / 2.0, u * w, v * h],
    };
    geom::add(&b.center, &rotate_xy(&local, b.heading))
}

fn poisson_at_least_one(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if !(lambda > 0.0) {
        return 1;
    }
    let n: f64 = Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(1.0);
    (n as usize).max(1)
}

fn render(spec: &SceneSpec, lay: &Layout, t: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(t as u64 + 1);
    let pose = ego_pose(&spec.ego, t);
    let yaw = spec.ego.yaw_rate * t as f64;
    let inv_rot = |v: &Vec3| rotate_xy(v, -yaw);
    let boxes: Vec<InstanceBox> = lay
        .instances
        .iter()
        .map(|b| {
            let world = geom::add(&b.center, &[b.velocity[0] * t as f64, b.velocity[1] * t as f64, 0.0]);
            InstanceBox {
                center: pose.from_world(&world),
                heading: b.heading - yaw,
                velocity: inv_rot(&b.velocity),
                ..*b
            }
        })
        .collect();
    let mut points = Vec::new();
    let mut semantic = Vec::new();
    let mut instance = Vec::new();
    for b in &boxes {
        let r = libm::hypot(b.center[0], b.center[1]);
        let n = poisson_at_least_one(&mut rng, spec.density.at(r) * b.size[0] * b.size[2]);
        for _ in 0..n {
            let p = sample_box_surface(&mut rng, b);
            points.push(Point::new(p[0], p[1], p[2], rng.random_range(0.2..0.9)));
            semantic.push(b.class);
            instance.push(b.id);
        }
    }
    let peak = spec.density.knots[0].1;
    for s in &spec.stuff {
        match s.shape {
            StuffShape::Ground { points: n } => {
                let mut made = 0;
                let mut tries = 0;
                while made < n && tries < 50 * n {
                    tries += 1;
                    let r = spec.sensor_range * libm::sqrt(rng.random_range(0.0..1.0));
                    let az = rng.random_range(-PI..PI);
                    if rng.random_range(0.0..1.0) * peak > spec.density.at(r) {
                        continue;
                    }
                    let p = [r * libm::cos(az), r * libm::sin(az), spec.ground_z + rng.random_range(-0.02..0.02)];
                    if boxes.iter().any(|b| b.contains_xy(&p, 0.1)) {
                        continue;
                    }
                    points.push(Point::new(p[0], p[1], p[2], rng.random_range(0.0..0.3)));
                    semantic.push(s.class);
                    instance.push(0);
                    made += 1;
                }
            }
            StuffShape::Blobs { .. } => {
                for &(class, c, rad, n) in lay.blobs.iter().filter(|b| b.0 == s.class) {
                    let local = pose.from_world(&c);
                    let scale = spec.density.at(libm::hypot(local[0], local[1])) / peak;
                    for _ in 0..libm::ceil(n as f64 * scale) as usize {
                        let d = [
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(0.0..1.0),
                        ];
                        let len = geom::norm(&d).max(1e-9);
                        let p = geom::add(&local, &[d[0] / len * rad, d[1] / len * rad, d[2] / len * rad]);
                        points.push(Point::new(p[0], p[1], p[2], rng.random_range(0.3..0.6)));
                        semantic.push(class);
                        instance.push(0);
                    }
                }
            }
        }
    }
    Scene {
        frame: Frame {
            points,
            semantic: Some(semantic),
            instance: Some(instance),
            pose: Some(pose),
            timestamp_index: t,
        },
        boxes,
    }
}

/// One scan at the identity pose. Equal to frame 0 of [`generate_sequence`].
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    Ok(generate_sequence(spec, 1)?.remove(0))
}

/// `frames` scans of one static world with moving instances and ego motion.
/// Instance ids are consistent across frames.
pub fn generate_sequence(spec: &SceneSpec, frames: usize) -> Result<Vec<Scene>> {
    spec.validate()?;
    if frames == 0 {
        return Err(Error::Empty("sequence"));
    }
    let lay = layout(spec);
    Ok((0..frames).map(|t| render(spec, &lay, t)).collect())
}

/// Simulated regressed centers and head features for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    /// Per point; non-things points keep their own position.
    pub centers: Vec<Vec3>,
    /// `N x FEATURE_DIM`.
    pub features: Matrix,
}

/// Noisy regressed centers toward each point's `target`.
///
/// `axis` and `extent` give the strip direction and the instance length per
/// point; points with `None` are not things and map to themselves.
pub fn noisy_centers(
    points: &[Vec3],
    targets: &[Option<(Vec3, Vec3, f64)>],
    noise: &NoiseModel,
    seed: u64,
) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.jitter).ok();
    let half = libm::sqrt(3.0) * noise.elongation;
    points
        .iter()
        .zip(targets)
        .map(|(p, t)| match t {
            None => *p,
            Some((center, axis, extent)) => {
                let mut c = *center;
                if half > 0.0 {
                    let u = rng.random_range(-half..half) * extent;
                    c = geom::add(&c, &[u * axis[0], u * axis[1], u * axis[2]]);
                }
                if let Some(j) = &jitter {
                    if noise.jitter > 0.0 {
                        c = geom::add(&c, &[j.sample(&mut rng), j.sample(&mut rng), j.sample(&mut rng)]);
                    }
                }
                c
            }
        })
        .collect()
}

fn rms_spread(points: &[Vec3], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let n = idx.len() as f64;
    let mut m = [0.0; 3];
    for &i in idx {
        m = geom::add(&m, &points[i]);
    }
    let m = [m[0] / n, m[1] / n, m[2] / n];
    libm::sqrt(idx.iter().map(|&i| geom::dist2(&points[i], &m)).sum::<f64>() / n)
}

/// Head features for every point; see the module docs for the layout.
pub fn point_features(points: &[Point], things: &[bool], centers: &[Vec3]) -> Matrix {
    let n = points.len();
    let mut f = Matrix::zeros(n, FEATURE_DIM);
    let idx: Vec<usize> = (0..n).filter(|&i| things[i]).collect();
    let tp: Vec<Vec3> = idx.iter().map(|&i| points[i].xyz()).collect();
    let tc: Vec<Vec3> = idx.iter().map(|&i| centers[i]).collect();
    let pgrid = GridIndex::new(&tp, 1.0);
    let cgrid = GridIndex::new(&tc, 1.0);
    for (i, p) in points.iter().enumerate() {
        let row = f.row_mut(i);
        row[0] = p.range();
        row[6] = p.z;
        row[7] = p.intensity;
    }
    let mut near = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        let mut ones = 0usize;
        near.clear();
        pgrid.for_each_within(&tp, &tp[k], 2.0, |j| {
            near.push(j);
            if geom::dist2(&tp[j], &tp[k]) <= 1.0 {
                ones += 1;
            }
        });
        let sp = rms_spread(&tp, &near);
        let mut halves = 0usize;
        near.clear();
        cgrid.for_each_within(&tc, &tc[k], 2.0, |j| {
            near.push(j);
            if geom::dist2(&tc[j], &tc[k]) <= 0.25 {
                halves += 1;
            }
        });
        let sc = rms_spread(&tc, &near);
        let row = f.row_mut(i);
        row[1] = libm::log1p(ones as f64);
        row[2] = sp;
        row[3] = geom::dist(&tc[k], &tp[k]);
        row[4] = libm::log1p(halves as f64);
        row[5] = sc;
    }
    f
}

/// Regressed centers around the true box centers, plus features.
pub fn simulate_regressed_centers(scene: &Scene, noise: &NoiseModel, seed: u64) -> Regression {
    let boxes: BTreeMap<InstanceId, &InstanceBox> = scene.boxes.iter().map(|b| (b.id, b)).collect();
    let positions = scene.frame.positions();
    let ids = scene.frame.instance.clone().unwrap_or_else(|| vec![0; positions.len()]);
    let targets: Vec<Option<(Vec3, Vec3, f64)>> = ids
        .iter()
        .map(|id| boxes.get(id).map(|b| (b.center, b.axis(), b.size[0])))
        .collect();
    let centers = noisy_centers(&positions, &targets, noise, seed);
    let things: Vec<bool> = targets.iter().map(Option::is_some).collect();
    let features = point_features(&scene.frame.points, &things, &centers);
    Regression { centers, features }
}

/// Window regressor over a generated sequence.
///
/// Targets are the overlapped centers of each instance across the window,
/// or, with `overlapped` off, each frame's own box center. Noise strips
/// follow the instance heading in the window's reference frame.
#[derive(Debug, Clone)]
pub struct SimulatedRegressor<'a> {
    pub scenes: &'a [Scene],
    pub noise: NoiseModel,
    pub seed: u64,
    pub overlapped: bool,
}

impl WindowRegressor for SimulatedRegressor<'_> {
    fn regress(&mut self, start: usize, fused: &FusedWindow) -> Result<(Vec<Vec3>, Option<Matrix>)> {
        let frames = self
            .scenes
            .get(start..start + fused.num_frames())
            .ok_or(Error::Empty("scenes for window"))?;
        let reference = frames[0].frame.pose.ok_or(Error::MissingPose(start))?;
        let mut ids = Vec::with_capacity(fused.len());
        for s in frames {
            ids.extend(s.frame.instance.clone().unwrap_or_else(|| vec![0; s.frame.len()]));
        }
        let overlapped = if self.overlapped {
            Some(overlapped_center_targets(fused, &ids)?)
        } else {
            None
        };
        // (center, axis, length) of each id per window frame, in reference coordinates
        let mut boxes: Vec<BTreeMap<InstanceId, (Vec3, Vec3, f64)>> = Vec::with_capacity(frames.len());
        for s in frames {
            let pose = s.frame.pose.ok_or(Error::MissingPose(s.frame.timestamp_index))?;
            let mut m = BTreeMap::new();
            for b in &s.boxes {
                let tip = geom::add(&b.center, &b.axis());
                let a = geom::align_frame(&[b.center, tip], &pose, &reference)?;
                m.insert(b.id, (a[0], geom::sub(&a[1], &a[0]), b.size[0]));
            }
            boxes.push(m);
        }
        let mut targets = Vec::with_capacity(fused.len());
        for k in 0..fused.num_frames() {
            for i in fused.frame_range(k) {
                let t = boxes[k].get(&ids[i]).map(|&(c, axis, len)| {
                    let c = overlapped.as_ref().map_or(c, |o| o[i]);
                    (c, axis, len)
                });
                targets.push(t);
            }
        }
        let seed = self.seed.wrapping_add((start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let centers = noisy_centers(&fused.positions(), &targets, &self.noise, seed);
        let things: Vec<bool> = targets.iter().map(Option::is_some).collect();
        let features = point_features(&fused.points, &things, &centers);
        Ok((centers, Some(features)))
    }
}

/// Mean per-point L1 error of predicted offsets against `C_gt - P`.
pub fn center_regression_loss(offsets: &[Vec3], points: &[Vec3], gt_centers: &[Vec3]) -> Result<f64> {
    if offsets.is_empty() {
        return Err(Error::Empty("offsets"));
    }
    if offsets.len() != points.len() || points.len() != gt_centers.len() {
        return Err(Error::LengthMismatch {
            what: "offset inputs",
            expected: offsets.len(),
            got: points.len().min(gt_centers.len()),
        });
    }
    let total: f64 = offsets
        .iter()
        .zip(points)
        .zip(gt_centers)
        .map(|((o, p), c)| (0..3).map(|a| libm::fabs(o[a] - (c[a] - p[a]))).sum::<f64>())
        .sum();
    Ok(total / offsets.len() as f64)
}
