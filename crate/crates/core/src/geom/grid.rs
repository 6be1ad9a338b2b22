use alloc::vec::Vec;

use hashbrown::HashMap;

use super::dist2;
use crate::Vec3;

type CellKey = [i64; 3];

/// Uniform hash grid over a fixed point slice.
///
/// Indices inside each cell stay in ascending order, so every query visits
/// candidates in a reproducible order.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    cells: HashMap<CellKey, Vec<u32>>,
    lo: CellKey,
    hi: CellKey,
}

impl GridIndex {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        let mut cells: HashMap<CellKey, Vec<u32>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        Self { cell, cells, lo, hi }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Calls `f(j)` for every indexed point with `|p_j - q|^2 <= radius^2`.
    pub fn for_each_within(&self, points: &[Vec3], q: &Vec3, radius: f64, mut f: impl FnMut(usize)) {
        if self.cells.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let c = key(q, self.cell);
        let reach = libm::ceil(radius / self.cell) as i64;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let k = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if let Some(bucket) = self.cells.get(&k) {
                        for &j in bucket {
                            let j = j as usize;
                            if dist2(&points[j], q) <= r2 {
                                f(j);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Neighbors within `radius` (inclusive), sorted ascending.
    pub fn within(&self, points: &[Vec3], q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(points, q, radius, |j| out.push(j));
        out.sort_unstable();
        out
    }

    /// Nearest indexed point; exact distance ties go to the lowest index.
    pub fn nearest(&self, points: &[Vec3], q: &Vec3) -> Option<usize> {
        if self.cells.is_empty() {
            return None;
        }
        let c = key(q, self.cell);
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(f64, usize)> = None;
        let consider = |j: usize, best: &mut Option<(f64, usize)>| {
            let d = dist2(&points[j], q);
            match best {
                Some((bd, bj)) if d > *bd || (d == *bd && j > *bj) => {}
                _ => *best = Some((d, j)),
            }
        };
        for r in 0..=max_ring {
            let side = (2 * r + 1) as usize;
            if side * side * side > 4 * self.cells.len() {
                // The remaining rings are sparser than the occupied cells; scan those instead.
                for bucket in self.cells.values() {
                    for &j in bucket {
                        consider(j as usize, &mut best);
                    }
                }
                return best.map(|b| b.1);
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in bucket {
                                consider(j as usize, &mut best);
                            }
                        }
                    }
                }
            }
            if let Some((bd, _)) = best {
                let guard = r as f64 * self.cell;
                if bd <= guard * guard {
                    break;
                }
            }
        }
        best.map(|b| b.1)
    }
}

fn key(p: &Vec3, cell: f64) -> CellKey {
    [
        libm::floor(p[0] / cell) as i64,
        libm::floor(p[1] / cell) as i64,
        libm::floor(p[2] / cell) as i64,
    ]
}

/// Compressed per-row neighbor lists of a radius graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Neighborhoods {
    /// All pairs with `|x_i - x_j| <= radius`; each row is sorted ascending
    /// and always contains `i` itself.
    pub fn build(points: &[Vec3], radius: f64) -> Self {
        let grid = GridIndex::new(points, radius.max(1e-9));
        let mut offsets = Vec::with_capacity(points.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        let mut row = Vec::new();
        for p in points {
            row.clear();
            grid.for_each_within(points, p, radius, |j| row.push(j as u32));
            row.sort_unstable();
            indices.extend_from_slice(&row);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Total number of stored pairs, self pairs included.
    pub fn pair_count(&self) -> usize {
        self.indices.len()
    }

    /// Row-wise neighborhood means, i.e. `D^-1 K X`.
    pub fn means(&self, points: &[Vec3]) -> Vec<Vec3> {
        (0..self.len())
            .map(|i| {
                let row = self.row(i);
                let mut acc = [0.0; 3];
                for &j in row {
                    let p = &points[j as usize];
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                }
                let inv = 1.0 / row.len() as f64;
                [acc[0] * inv, acc[1] * inv, acc[2] * inv]
            })
            .collect()
    }
}
