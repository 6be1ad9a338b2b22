//! Shared domain types, the things/stuff registry and the packed label codec.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub type Vec3 = [f64; 3];
pub type ClassId = u16;
pub type InstanceId = u32;

/// One LiDAR return in sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    /// Euclidean distance from the sensor origin.
    pub fn range(&self) -> f64 {
        libm::sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity >= 0.0
    }
}

/// Rigid ego pose mapping sensor coordinates into the world frame:
/// `world = R * p + T` for column vectors, equivalently `p R^-1 + T` for rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

const POSE_TOL: f64 = 1e-9;

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = (libm::sin(yaw), libm::cos(yaw));
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    /// Build from a row-major 3x4 `[R | T]` matrix without validation.
    pub fn from_matrix_3x4(m: &[f64; 12]) -> Self {
        Self {
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: [m[3], m[7], m[11]],
        }
    }

    pub fn to_matrix_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2],
        ]
    }

    /// Checks `R^T R = I` and `det R = 1` to within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().flatten().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(dot - want) > POSE_TOL {
                    return Err(Error::InvalidRotation("R^T R differs from identity"));
                }
            }
        }
        if libm::fabs(det3(r) - 1.0) > POSE_TOL {
            return Err(Error::InvalidRotation("determinant differs from 1"));
        }
        Ok(())
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    pub fn from_world(&self, p: &Vec3) -> Vec3 {
        let r = &self.rotation;
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2];
        }
        out
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Pose {
            rotation,
            translation: self.to_world(&other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[j][i];
            }
        }
        let t = Pose {
            rotation,
            translation: [0.0; 3],
        }
        .to_world(&self.translation);
        Pose {
            rotation,
            translation: [-t[0], -t[1], -t[2]],
        }
    }
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// One LiDAR scan. Optional label arrays, when present, match `points` in length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub points: Vec<Point>,
    pub semantic: Option<Vec<ClassId>>,
    pub instance: Option<Vec<InstanceId>>,
    pub pose: Option<Pose>,
    pub timestamp_index: usize,
}

impl Frame {
    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(Point::xyz).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self, classes: &ClassConfig) -> Result<()> {
        let n = self.points.len();
        if let Some(s) = &self.semantic {
            if s.len() != n {
                return Err(Error::LengthMismatch {
                    what: "frame semantic labels",
                    expected: n,
                    got: s.len(),
                });
            }
        }
        if let Some(inst) = &self.instance {
            if inst.len() != n {
                return Err(Error::LengthMismatch {
                    what: "frame instance labels",
                    expected: n,
                    got: inst.len(),
                });
            }
            if let Some(s) = &self.semantic {
                if let Some(i) = inst
                    .iter()
                    .zip(s)
                    .position(|(&id, &c)| id > 0 && !classes.is_things(c))
                {
                    return Err(Error::InvalidConfig(format!(
                        "point {i} has an instance id but class {} is not a things class",
                        s[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ClassKind {
    Things,
    Stuff,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
}

/// Things/stuff/ignore registry plus the minimum size of a valid instance.
///
/// Class ids missing from the registry behave like `ignore`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassConfig {
    pub classes: Vec<ClassInfo>,
    pub min_instance_points: usize,
}

impl ClassConfig {
    pub fn new(classes: Vec<ClassInfo>, min_instance_points: usize) -> Result<Self> {
        let cfg = Self {
            classes,
            min_instance_points,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_instance_points == 0 {
            return Err(Error::InvalidConfig("min_instance_points must be positive".into()));
        }
        let mut ids: Vec<ClassId> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!("duplicate class id {}", w[0])));
        }
        if !self.classes.iter().any(|c| c.kind == ClassKind::Things) {
            return Err(Error::InvalidConfig("at least one things class is required".into()));
        }
        Ok(())
    }

    /// The class layout produced by the synthetic generator.
    pub fn synthetic() -> Self {
        let c = |id, name: &str, kind| ClassInfo {
            id,
            name: name.into(),
            kind,
        };
        Self {
            classes: vec![
                c(0, "unlabeled", ClassKind::Ignore),
                c(1, "person", ClassKind::Things),
                c(2, "car", ClassKind::Things),
                c(3, "truck", ClassKind::Things),
                c(4, "road", ClassKind::Stuff),
                c(5, "vegetation", ClassKind::Stuff),
            ],
            min_instance_points: 10,
        }
    }

    pub fn kind(&self, id: ClassId) -> ClassKind {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .map_or(ClassKind::Ignore, |c| c.kind)
    }

    pub fn is_things(&self, id: ClassId) -> bool {
        self.kind(id) == ClassKind::Things
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }

    /// Non-ignore classes, in registry order.
    pub fn evaluated(&self) -> impl Iterator<Item = &ClassInfo> {
        self.classes.iter().filter(|c| c.kind != ClassKind::Ignore)
    }
}

/// Per-point `(semantic, instance)` labels; instance 0 means stuff or no instance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PanopticLabeling {
    pub semantic: Vec<ClassId>,
    pub instance: Vec<InstanceId>,
}

impl PanopticLabeling {
    pub fn new(semantic: Vec<ClassId>, instance: Vec<InstanceId>) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::LengthMismatch {
                what: "instance labels",
                expected: semantic.len(),
                got: instance.len(),
            });
        }
        Ok(Self { semantic, instance })
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn to_packed(&self) -> Result<Vec<u32>> {
        self.semantic
            .iter()
            .zip(&self.instance)
            .map(|(&s, &i)| encode_label(u32::from(s), i))
            .collect()
    }

    pub fn from_packed(words: &[u32]) -> Self {
        let (semantic, instance) = words
            .iter()
            .map(|&w| {
                let (s, i) = decode_label(w);
                (s, InstanceId::from(i))
            })
            .unzip();
        Self { semantic, instance }
    }
}

/// Packs a label word: low 16 bits semantic, high 16 bits instance.
pub fn encode_label(semantic: u32, instance: u32) -> Result<u32> {
    if semantic > 0xFFFF {
        return Err(Error::LabelOverflow {
            field: "semantic",
            value: semantic,
        });
    }
    if instance > 0xFFFF {
        return Err(Error::LabelOverflow {
            field: "instance",
            value: instance,
        });
    }
    Ok((instance << 16) | semantic)
}

pub fn decode_label(word: u32) -> (u16, u16) {
    ((word & 0xFFFF) as u16, (word >> 16) as u16)
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows picked by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::LengthMismatch {
                    what: "matrix columns",
                    expected: cols,
                    got: m.cols,
                });
            }
            rows += m.rows;
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }
}
