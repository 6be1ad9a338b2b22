//! Single-frame panoptic inference: cluster things points, then fuse.

use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::{ClusterResult, Heuristic, MeanShiftParams};
use crate::dshift::{ds_forward, DsConfig, WeightHead};
use crate::fusion::{majority_vote_fuse, FusionPolicy};
use crate::{ClassConfig, ClassId, Error, Matrix, PanopticLabeling, Result, Vec3};

/// Instance clustering applied to the regressed centers of things points.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    Heuristic(Heuristic),
    DynamicShift(DsConfig),
}

impl Algorithm {
    pub fn mean_shift(bandwidth: f64) -> Self {
        Self::Heuristic(Heuristic::MeanShift(MeanShiftParams::with_bandwidth(bandwidth)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Heuristic(Heuristic::MeanShift(_)) => "meanshift",
            Self::Heuristic(Heuristic::Bfs { .. }) => "bfs",
            Self::Heuristic(Heuristic::Dbscan { .. }) => "dbscan",
            Self::DynamicShift(_) => "dshift",
        }
    }
}

/// Per-point inputs of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub points: &'a [Vec3],
    pub semantic: &'a [ClassId],
    pub centers: &'a [Vec3],
    /// Required by dynamic shifting only.
    pub features: Option<&'a Matrix>,
}

/// Clusters the given points' regressed centers. `features` rows align with `points`.
pub fn cluster_points(
    points: &[Vec3],
    centers: &[Vec3],
    features: Option<&Matrix>,
    algorithm: &Algorithm,
    head: Option<&WeightHead>,
) -> Result<ClusterResult> {
    match algorithm {
        Algorithm::Heuristic(h) => Ok(h.run(centers)),
        Algorithm::DynamicShift(cfg) => {
            let head = head.ok_or_else(|| Error::InvalidConfig("dynamic shifting needs a weight head".into()))?;
            let features = features.ok_or_else(|| Error::InvalidConfig("dynamic shifting needs features".into()))?;
            Ok(ds_forward(points, features, centers, cfg, head)?.clusters)
        }
    }
}

/// Things mask, clustering of the masked centers, then majority-vote fusion.
pub fn segment_frame(
    input: &FrameInput<'_>,
    classes: &ClassConfig,
    algorithm: &Algorithm,
    head: Option<&WeightHead>,
    policy: &FusionPolicy,
) -> Result<PanopticLabeling> {
    let n = input.points.len();
    for (what, got) in [("semantic labels", input.semantic.len()), ("regressed centers", input.centers.len())] {
        if got != n {
            return Err(Error::LengthMismatch { what, expected: n, got });
        }
    }
    if let Some(f) = input.features {
        if f.rows != n {
            return Err(Error::LengthMismatch {
                what: "feature rows",
                expected: n,
                got: f.rows,
            });
        }
    }
    let things: Vec<usize> = (0..n).filter(|&i| classes.is_things(input.semantic[i])).collect();
    let pts: Vec<Vec3> = things.iter().map(|&i| input.points[i]).collect();
    let ctr: Vec<Vec3> = things.iter().map(|&i| input.centers[i]).collect();
    let feats = input.features.map(|f| f.select_rows(&things));
    let clusters = cluster_points(&pts, &ctr, feats.as_ref(), algorithm, head)?;
    let mut instance = vec![0; n];
    for (k, &i) in things.iter().enumerate() {
        instance[i] = clusters.ids[k];
    }
    majority_vote_fuse(input.semantic, &instance, classes, policy)
}
