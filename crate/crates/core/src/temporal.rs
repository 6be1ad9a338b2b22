//! 4D association: pose-aligned sliding windows clustered frame-agnostically,
//! with ids carried between windows through the frames they share.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::ClusterResult;
use crate::dshift::WeightHead;
use crate::fusion::{majority_vote_fuse, FusionPolicy};
use crate::geom::{align_frame, instance_box_centers};
use crate::pipeline::{cluster_points, Algorithm};
use crate::{ClassConfig, ClassId, Error, Frame, InstanceId, Matrix, PanopticLabeling, Point, Result, Vec3};

/// Consecutive frames aligned into the first frame's coordinates and concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedWindow {
    pub points: Vec<Point>,
    /// Source `timestamp_index` of every point.
    pub frame_mask: Vec<usize>,
    /// Frame `k` of the window owns `offsets[k]..offsets[k + 1]`.
    pub offsets: Vec<usize>,
}

impl FusedWindow {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_frames(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(Point::xyz).collect()
    }

    pub fn frame_range(&self, k: usize) -> core::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Splits per-point values back into per-frame vectors.
    pub fn split<T: Clone>(&self, values: &[T]) -> Vec<Vec<T>> {
        (0..self.num_frames()).map(|k| values[self.frame_range(k)].to_vec()).collect()
    }
}

/// Aligns every frame into the first frame's coordinates and concatenates.
/// The first frame's points are copied unchanged.
pub fn fuse_window(frames: &[Frame]) -> Result<FusedWindow> {
    let first = frames.first().ok_or(Error::Empty("window"))?;
    let reference = first.pose.ok_or(Error::MissingPose(first.timestamp_index))?;
    let mut out = FusedWindow {
        points: Vec::new(),
        frame_mask: Vec::new(),
        offsets: vec![0],
    };
    for (k, f) in frames.iter().enumerate() {
        let pose = f.pose.ok_or(Error::MissingPose(f.timestamp_index))?;
        if k == 0 {
            out.points.extend_from_slice(&f.points);
        } else {
            let aligned = align_frame(&f.positions(), &pose, &reference)?;
            out.points
                .extend(aligned.iter().zip(&f.points).map(|(a, p)| Point::new(a[0], a[1], a[2], p.intensity)));
        }
        out.frame_mask.extend(core::iter::repeat_n(f.timestamp_index, f.len()));
        out.offsets.push(out.points.len());
    }
    Ok(out)
}

/// Per-point regression target: the tight box center of the union of each
/// id's points over the whole window. Points with id 0 map to themselves.
pub fn overlapped_center_targets(fused: &FusedWindow, instance: &[InstanceId]) -> Result<Vec<Vec3>> {
    if instance.len() != fused.len() {
        return Err(Error::LengthMismatch {
            what: "window instance ids",
            expected: fused.len(),
            got: instance.len(),
        });
    }
    let pos = fused.positions();
    let centers = instance_box_centers(&pos, instance);
    Ok(pos
        .iter()
        .zip(instance)
        .map(|(p, id)| if *id == 0 { *p } else { centers[id] })
        .collect())
}

/// Clusters the things points of a fused window, ignoring which frame each
/// came from. Non-things points get id 0.
pub fn cluster_window(
    fused: &FusedWindow,
    things: &[bool],
    centers: &[Vec3],
    features: Option<&Matrix>,
    algorithm: &Algorithm,
    head: Option<&WeightHead>,
) -> Result<ClusterResult> {
    if things.len() != fused.len() || centers.len() != fused.len() {
        return Err(Error::LengthMismatch {
            what: "window inputs",
            expected: fused.len(),
            got: things.len().min(centers.len()),
        });
    }
    let idx: Vec<usize> = (0..fused.len()).filter(|&i| things[i]).collect();
    let pts: Vec<Vec3> = idx.iter().map(|&i| fused.points[i].xyz()).collect();
    let ctr: Vec<Vec3> = idx.iter().map(|&i| centers[i]).collect();
    let feats = features.map(|f| f.select_rows(&idx));
    let sub = cluster_points(&pts, &ctr, feats.as_ref(), algorithm, head)?;
    let mut ids = vec![0; fused.len()];
    for (k, &i) in idx.iter().enumerate() {
        ids[i] = sub.ids[k];
    }
    Ok(ClusterResult { ids, modes: sub.modes })
}

/// Window-local to sequence-global id mapping of the latest window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackIdMap {
    pub local_to_global: BTreeMap<InstanceId, InstanceId>,
    /// Next unused global id; only ever increases.
    pub next_id: InstanceId,
}

impl Default for TrackIdMap {
    fn default() -> Self {
        Self {
            local_to_global: BTreeMap::new(),
            next_id: 1,
        }
    }
}

impl TrackIdMap {
    pub fn fresh(&mut self) -> InstanceId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Global id of a window-local id; 0 stays 0.
    pub fn global(&self, local: InstanceId) -> InstanceId {
        if local == 0 {
            0
        } else {
            self.local_to_global[&local]
        }
    }
}

/// Maps the current window's local ids to global ids.
///
/// `prev_shared` holds the global ids the previous window gave the shared
/// frames' points, `cur_shared` the current window's local ids on the same
/// points. Pairs are taken greedily by overlap count (descending), then
/// global id, then local id; each global and each local id is used once.
/// Unmatched local ids get fresh global ids in ascending order.
pub fn stitch_ids(
    prev_shared: &[InstanceId],
    cur_shared: &[InstanceId],
    cur_local_ids: &BTreeSet<InstanceId>,
    map: &mut TrackIdMap,
) -> Result<()> {
    if prev_shared.len() != cur_shared.len() {
        return Err(Error::LengthMismatch {
            what: "shared frame points",
            expected: prev_shared.len(),
            got: cur_shared.len(),
        });
    }
    let mut overlap: BTreeMap<(InstanceId, InstanceId), usize> = BTreeMap::new();
    for (&g, &l) in prev_shared.iter().zip(cur_shared) {
        if g != 0 && l != 0 {
            *overlap.entry((g, l)).or_default() += 1;
        }
    }
    let mut pairs: Vec<((InstanceId, InstanceId), usize)> = overlap.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut used = BTreeSet::new();
    let mut next = BTreeMap::new();
    for ((g, l), _) in pairs {
        if !used.contains(&g) && !next.contains_key(&l) && cur_local_ids.contains(&l) {
            used.insert(g);
            next.insert(l, g);
        }
    }
    for &l in cur_local_ids.iter().filter(|&&l| l != 0) {
        next.entry(l).or_insert_with(|| map.fresh());
    }
    map.local_to_global = next;
    Ok(())
}

/// Source of regressed centers and head features for a fused window.
pub trait WindowRegressor {
    /// `start` is the sequence index of the window's first frame. Returns
    /// one center per fused point and, optionally, features.
    fn regress(&mut self, start: usize, fused: &FusedWindow) -> Result<(Vec<Vec3>, Option<Matrix>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConfig {
    /// Frames per window; consecutive windows overlap by `window - 1` frames.
    pub window: usize,
    pub algorithm: Algorithm,
    pub policy: FusionPolicy,
}

/// Sliding-window 4D panoptic inference with globally consistent ids.
///
/// Frames need poses and semantic labels. Window `s` covers frames
/// `s..s + window`; frames of the first window take their labels from it and
/// every later frame from the first window that ends with it.
pub fn run_4d_pipeline(
    frames: &[Frame],
    classes: &ClassConfig,
    cfg: &TemporalConfig,
    head: Option<&WeightHead>,
    regressor: &mut dyn WindowRegressor,
) -> Result<Vec<PanopticLabeling>> {
    if cfg.window == 0 {
        return Err(Error::InvalidConfig("window must hold at least one frame".into()));
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let semantics: Vec<&[ClassId]> = frames
        .iter()
        .map(|f| {
            f.semantic
                .as_deref()
                .filter(|s| s.len() == f.len())
                .ok_or_else(|| Error::InvalidConfig("every frame needs semantic labels".into()))
        })
        .collect::<Result<_>>()?;
    let window = cfg.window.min(frames.len());
    let mut map = TrackIdMap::default();
    let mut out: Vec<Option<Vec<InstanceId>>> = vec![None; frames.len()];
    // global ids of the previous window, per window frame
    let mut prev: Vec<Vec<InstanceId>> = Vec::new();
    for start in 0..=frames.len() - window {
        let fused = fuse_window(&frames[start..start + window])?;
        let things: Vec<bool> = (0..window)
            .flat_map(|k| semantics[start + k].iter().map(|&c| classes.is_things(c)))
            .collect();
        let (centers, features) = regressor.regress(start, &fused)?;
        let clusters = cluster_window(&fused, &things, &centers, features.as_ref(), &cfg.algorithm, head)?;
        let locals: BTreeSet<InstanceId> = clusters.ids.iter().copied().filter(|&i| i != 0).collect();
        if start == 0 {
            for &l in &locals {
                let g = map.fresh();
                map.local_to_global.insert(l, g);
            }
        } else {
            let shared_prev: Vec<InstanceId> = prev[1..].concat();
            let shared_cur = &clusters.ids[..fused.offsets[window - 1]];
            stitch_ids(&shared_prev, shared_cur, &locals, &mut map)?;
        }
        let global: Vec<InstanceId> = clusters.ids.iter().map(|&l| map.global(l)).collect();
        prev = fused.split(&global);
        for (k, ids) in prev.iter().enumerate() {
            let slot = &mut out[start + k];
            if slot.is_none() {
                *slot = Some(ids.clone());
            }
        }
    }
    out.into_iter()
        .zip(&semantics)
        .map(|(ids, sem)| majority_vote_fuse(sem, &ids.unwrap_or_default(), classes, &cfg.policy))
        .collect()
}
