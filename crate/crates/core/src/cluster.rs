//! Heuristic clustering baselines: radius-graph BFS, DBSCAN and blurring
//! mean shift with a flat kernel.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::geom::{self, FpsStart, GridIndex, Neighborhoods};
use crate::{InstanceId, Vec3};

/// Per-point instance ids (0 = noise) and one mode per nonzero id.
///
/// Ids are contiguous from 1; `modes[k - 1]` belongs to id `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterResult {
    pub ids: Vec<InstanceId>,
    pub modes: Vec<Vec3>,
}

impl ClusterResult {
    pub fn num_clusters(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, id: InstanceId) -> Option<&Vec3> {
        (id > 0).then(|| self.modes.get(id as usize - 1)).flatten()
    }

    /// Builds a result from raw labels: components smaller than `min_pts`
    /// become noise and surviving ids are renumbered in first-appearance
    /// order. Modes are member centroids.
    fn from_components(points: &[Vec3], comp: &[usize], min_pts: usize) -> Self {
        let ncomp = comp.iter().copied().filter(|&c| c != usize::MAX).max().map_or(0, |m| m + 1);
        let mut size = vec![0usize; ncomp];
        for &c in comp.iter().filter(|&&c| c != usize::MAX) {
            size[c] += 1;
        }
        let mut remap = vec![0 as InstanceId; ncomp];
        let mut sums: Vec<(Vec3, usize)> = Vec::new();
        let mut ids = vec![0; points.len()];
        for (i, &c) in comp.iter().enumerate() {
            if c == usize::MAX || size[c] < min_pts {
                continue;
            }
            if remap[c] == 0 {
                sums.push(([0.0; 3], 0));
                remap[c] = sums.len() as InstanceId;
            }
            let id = remap[c];
            ids[i] = id;
            let s = &mut sums[id as usize - 1];
            for a in 0..3 {
                s.0[a] += points[i][a];
            }
            s.1 += 1;
        }
        let modes = sums
            .into_iter()
            .map(|(s, n)| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
            .collect();
        Self { ids, modes }
    }
}

/// Connected components of the `radius` graph; components below `min_pts` are noise.
pub fn bfs_cluster(points: &[Vec3], radius: f64, min_pts: usize) -> ClusterResult {
    let grid = GridIndex::new(points, radius);
    let mut comp = vec![usize::MAX; points.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..points.len() {
        if comp[seed] != usize::MAX {
            continue;
        }
        comp[seed] = next;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            grid.for_each_within(points, &points[i], radius, |j| {
                if comp[j] == usize::MAX {
                    comp[j] = next;
                    queue.push_back(j);
                }
            });
        }
        next += 1;
    }
    ClusterResult::from_components(points, &comp, min_pts)
}

/// Density-based clustering. A point is core when at least `min_pts`
/// points (itself included) lie within `eps`. Border points join the first
/// cluster that reaches them in index order.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> ClusterResult {
    const UNSEEN: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let grid = GridIndex::new(points, eps);
    let mut label = vec![UNSEEN; points.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for seed in 0..points.len() {
        if label[seed] != UNSEEN {
            continue;
        }
        nbrs.clear();
        grid.for_each_within(points, &points[seed], eps, |j| nbrs.push(j));
        if nbrs.len() < min_pts {
            label[seed] = NOISE;
            continue;
        }
        label[seed] = next;
        queue.extend(nbrs.iter().copied());
        while let Some(q) = queue.pop_front() {
            if label[q] == NOISE {
                label[q] = next;
                continue;
            }
            if label[q] != UNSEEN {
                continue;
            }
            label[q] = next;
            nbrs.clear();
            grid.for_each_within(points, &points[q], eps, |j| nbrs.push(j));
            if nbrs.len() >= min_pts {
                queue.extend(nbrs.iter().copied().filter(|&j| label[j] == UNSEEN || label[j] == NOISE));
            }
        }
        next += 1;
    }
    for l in &mut label {
        if *l == NOISE {
            *l = UNSEEN;
        }
    }
    ClusterResult::from_components(points, &label, 1)
}

/// One flat-kernel step `D^-1 K X`: each row becomes the mean of the rows within `delta`.
pub fn flat_kernel_step(x: &[Vec3], delta: f64) -> Vec<Vec3> {
    Neighborhoods::build(x, delta).means(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanShiftParams {
    pub bandwidth: f64,
    pub max_iters: usize,
    /// Stop once the largest per-row displacement drops below this (meters).
    pub converge_tol: f64,
    /// Converged positions closer than this to an existing mode join it.
    pub merge_radius: f64,
    /// Optional farthest-point subsample used as seeds; `None` seeds every point.
    pub max_seeds: Option<usize>,
}

impl MeanShiftParams {
    pub fn with_bandwidth(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            max_iters: 100,
            converge_tol: 1e-3,
            merge_radius: bandwidth / 2.0,
            max_seeds: None,
        }
    }
}

/// Blurring mean shift: repeated [`flat_kernel_step`] on the seed set,
/// greedy mode merging in seed order, then per-point labels.
pub fn mean_shift(points: &[Vec3], params: &MeanShiftParams) -> ClusterResult {
    if points.is_empty() {
        return ClusterResult::default();
    }
    let seeds: Option<Vec<usize>> = params
        .max_seeds
        .filter(|&m| m < points.len())
        .map(|m| geom::farthest_point_sampling(points, m, FpsStart::Lowest));
    let mut x: Vec<Vec3> = match &seeds {
        Some(idx) => idx.iter().map(|&i| points[i]).collect(),
        None => points.to_vec(),
    };
    for _ in 0..params.max_iters {
        let next = flat_kernel_step(&x, params.bandwidth);
        let moved = x
            .iter()
            .zip(&next)
            .map(|(a, b)| geom::dist2(a, b))
            .fold(0.0, f64::max);
        x = next;
        if libm::sqrt(moved) < params.converge_tol {
            break;
        }
    }
    let seed_result = merge_modes(&x, params.merge_radius);
    match seeds {
        None => seed_result,
        Some(idx) => {
            let seed_pos: Vec<Vec3> = idx.iter().map(|&i| points[i]).collect();
            let nearest = geom::nearest_neighbor_assign(points, &seed_pos).expect("seeds are non-empty");
            ClusterResult {
                ids: nearest.iter().map(|&s| seed_result.ids[s]).collect(),
                modes: seed_result.modes,
            }
        }
    }
}

/// A heuristic clusterer with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "algorithm", rename_all = "lowercase"))]
pub enum Heuristic {
    MeanShift(MeanShiftParams),
    Bfs { radius: f64, min_pts: usize },
    Dbscan { eps: f64, min_pts: usize },
}

impl Heuristic {
    pub fn run(&self, points: &[Vec3]) -> ClusterResult {
        match self {
            Heuristic::MeanShift(p) => mean_shift(points, p),
            Heuristic::Bfs { radius, min_pts } => bfs_cluster(points, *radius, *min_pts),
            Heuristic::Dbscan { eps, min_pts } => dbscan(points, *eps, *min_pts),
        }
    }
}

/// Greedy merge of converged positions: each position joins the
/// lowest-numbered existing mode whose representative lies within
/// `radius`, otherwise it opens a new mode. Reported modes are member means.
pub fn merge_modes(x: &[Vec3], radius: f64) -> ClusterResult {
    let cell = radius.max(1e-6);
    let mut reps: Vec<Vec3> = Vec::new();
    let mut rep_grid: hashbrown::HashMap<[i64; 3], Vec<usize>> = hashbrown::HashMap::new();
    let key = |p: &Vec3| {
        [
            libm::floor(p[0] / cell) as i64,
            libm::floor(p[1] / cell) as i64,
            libm::floor(p[2] / cell) as i64,
        ]
    };
    let r2 = radius * radius;
    let mut ids = Vec::with_capacity(x.len());
    let mut sums: Vec<(Vec3, usize)> = Vec::new();
    for p in x {
        let k = key(p);
        let mut found: Option<usize> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = rep_grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &m in bucket {
                            if geom::dist2(&reps[m], p) <= r2 && found.is_none_or(|f| m < f) {
                                found = Some(m);
                            }
                        }
                    }
                }
            }
        }
        let m = found.unwrap_or_else(|| {
            reps.push(*p);
            sums.push(([0.0; 3], 0));
            rep_grid.entry(k).or_default().push(reps.len() - 1);
            reps.len() - 1
        });
        for a in 0..3 {
            sums[m].0[a] += p[a];
        }
        sums[m].1 += 1;
        ids.push(m as InstanceId + 1);
    }
    let modes = sums
        .into_iter()
        .map(|(s, n)| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
        .collect();
    ClusterResult { ids, modes }
}
