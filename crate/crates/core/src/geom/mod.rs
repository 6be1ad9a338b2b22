//! Geometry kernels: sampling, neighbor search, bandwidth masks, pose alignment,
//! box centers and the regressed-center density profile.

mod grid;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use hashbrown::HashMap;

pub use grid::{GridIndex, Neighborhoods};

use crate::{Error, InstanceId, Pose, Result, Vec3};

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    libm::sqrt(dist2(a, b))
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    libm::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
}

/// Which point farthest-point sampling starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpsStart {
    #[default]
    Lowest,
    Index(usize),
    /// `seed % N`.
    Seeded(u64),
}

/// Greedy max-min-distance subset of size `min(m, N)`.
///
/// When `m >= N` every index is returned in ascending order. Distance ties
/// pick the lowest index.
pub fn farthest_point_sampling(points: &[Vec3], m: usize, start: FpsStart) -> Vec<usize> {
    let n = points.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if m >= n {
        return (0..n).collect();
    }
    let first = match start {
        FpsStart::Lowest => 0,
        FpsStart::Index(i) => i.min(n - 1),
        FpsStart::Seeded(s) => (s % n as u64) as usize,
    };
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = first;
    for _ in 0..m {
        chosen.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        current = best.1;
    }
    chosen
}

/// Maps each query to its Euclidean-nearest reference (ties to the lowest index).
pub fn nearest_neighbor_assign(query: &[Vec3], refs: &[Vec3]) -> Result<Vec<usize>> {
    if refs.is_empty() {
        return Err(Error::Empty("nearest-neighbor references"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in refs {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let cell = (span / libm::cbrt(refs.len() as f64)).max(0.05);
    nearest_neighbor_assign_with_cell(query, refs, cell)
}

/// Same as [`nearest_neighbor_assign`] with an explicit grid cell size.
pub fn nearest_neighbor_assign_with_cell(
    query: &[Vec3],
    refs: &[Vec3],
    cell: f64,
) -> Result<Vec<usize>> {
    if refs.is_empty() {
        return Err(Error::Empty("nearest-neighbor references"));
    }
    let grid = GridIndex::new(refs, cell);
    Ok(query
        .iter()
        .map(|q| grid.nearest(refs, q).expect("non-empty grid"))
        .collect())
}

/// Dense flat-kernel mask `K[i][j] = |x_i - x_j| <= delta` with row sums `D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMask {
    pub size: usize,
    pub k: Vec<bool>,
    pub d: Vec<usize>,
}

impl KernelMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.k[i * self.size + j]
    }

    /// True when every entry of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &KernelMask) -> bool {
        self.size == other.size && self.k.iter().zip(&other.k).all(|(&a, &b)| !a || b)
    }
}

impl From<&Neighborhoods> for KernelMask {
    fn from(nb: &Neighborhoods) -> Self {
        let size = nb.len();
        let mut k = vec![false; size * size];
        let mut d = vec![0; size];
        for i in 0..size {
            for &j in nb.row(i) {
                k[i * size + j as usize] = true;
            }
            d[i] = nb.row(i).len();
        }
        Self { size, k, d }
    }
}

/// Pairwise-distance mask at bandwidth `delta` (inclusive comparison).
pub fn bandwidth_mask(x: &[Vec3], delta: f64) -> KernelMask {
    let size = x.len();
    let d2 = delta * delta;
    let mut k = vec![false; size * size];
    let mut d = vec![0; size];
    for i in 0..size {
        for j in 0..size {
            if dist2(&x[i], &x[j]) <= d2 {
                k[i * size + j] = true;
                d[i] += 1;
            }
        }
    }
    KernelMask { size, k, d }
}

/// Re-expresses points of a scan with pose `source` in the sensor frame of
/// the scan with pose `reference`: `((P R_s^-1 + T_s) - T_r) R_r` in row-vector form.
pub fn align_frame(points: &[Vec3], source: &Pose, reference: &Pose) -> Result<Vec<Vec3>> {
    source.validate()?;
    reference.validate()?;
    Ok(points
        .iter()
        .map(|p| reference.from_world(&source.to_world(p)))
        .collect())
}

/// Axis-aligned bounds of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            b.grow(p);
        }
        Some(b)
    }

    pub fn grow(&mut self, p: &Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn center(&self) -> Vec3 {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    pub fn extent(&self) -> Vec3 {
        sub(&self.max, &self.min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCenter {
    pub center: Vec3,
}

/// Midpoint of the tight axis-parallel box around one instance.
pub fn tight_box_center(points: &[Vec3]) -> Result<BoxCenter> {
    Aabb::from_points(points)
        .map(|b| BoxCenter { center: b.center() })
        .ok_or(Error::Empty("instance points"))
}

/// Tight box center of every nonzero instance id.
pub fn instance_box_centers(points: &[Vec3], instance: &[InstanceId]) -> BTreeMap<InstanceId, Vec3> {
    let mut boxes: BTreeMap<InstanceId, Aabb> = BTreeMap::new();
    for (p, &id) in points.iter().zip(instance) {
        if id == 0 {
            continue;
        }
        boxes
            .entry(id)
            .and_modify(|b| b.grow(p))
            .or_insert(Aabb { min: *p, max: *p });
    }
    boxes.into_iter().map(|(id, b)| (id, b.center())).collect()
}

/// One labeled scan for [`density_profile`].
#[derive(Debug, Clone, Copy)]
pub struct DensityInput<'a> {
    pub points: &'a [Vec3],
    pub instance: &'a [InstanceId],
    pub centers: &'a [Vec3],
}

/// Voxel edge used by [`density_profile`] unless overridden.
pub const DEFAULT_DENSITY_VOXEL: f64 = 0.2;

/// Mean number of regressed centers per occupied voxel, per sensor-distance bin.
///
/// Each instance is binned by the range of its tight box center; its
/// regressed centers are voxelized with edge `voxel`. A bin's value is the
/// total center count divided by the total occupied voxel count of its
/// instances. Bins without instances are `None`.
pub fn density_profile(frames: &[DensityInput<'_>], bin_edges: &[f64], voxel: f64) -> Vec<Option<f64>> {
    assert!(voxel > 0.0, "voxel edge must be positive");
    let bins = bin_edges.len().saturating_sub(1);
    let mut centers_in_bin = vec![0usize; bins];
    let mut voxels_in_bin = vec![0usize; bins];
    for f in frames {
        let boxes = instance_box_centers(f.points, f.instance);
        let mut occupancy: BTreeMap<InstanceId, HashMap<[i64; 3], usize>> = BTreeMap::new();
        for (c, &id) in f.centers.iter().zip(f.instance) {
            if id == 0 {
                continue;
            }
            let k = [
                libm::floor(c[0] / voxel) as i64,
                libm::floor(c[1] / voxel) as i64,
                libm::floor(c[2] / voxel) as i64,
            ];
            *occupancy.entry(id).or_default().entry(k).or_default() += 1;
        }
        for (id, cells) in occupancy {
            let range = norm(&boxes[&id]);
            let Some(b) = (0..bins).find(|&b| range >= bin_edges[b] && range < bin_edges[b + 1]) else {
                continue;
            };
            centers_in_bin[b] += cells.values().sum::<usize>();
            voxels_in_bin[b] += cells.len();
        }
    }
    centers_in_bin
        .iter()
        .zip(&voxels_in_bin)
        .map(|(&c, &v)| (v > 0).then(|| c as f64 / v as f64))
        .collect()
}
