//! Consensus fusion: one semantic class per predicted instance by majority vote.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::{ClassConfig, ClassId, ClassKind, Error, InstanceId, PanopticLabeling, Result};

/// How equal vote counts are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TieBreak {
    #[default]
    LowestClassId,
}

/// What happens to an instance whose modal label is not a things class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StuffMajorityAction {
    /// Dissolve the instance; its points keep their semantics.
    #[default]
    DropInstance,
    /// Keep it and vote among its things-labelled points only. Instances with
    /// no things points are still dropped.
    KeepInstanceAsMajorityThings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FusionPolicy {
    pub tie_break: TieBreak,
    pub stuff_majority_action: StuffMajorityAction,
    /// Always at least 1.
    pub min_instance_points: usize,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self {
            tie_break: TieBreak::LowestClassId,
            stuff_majority_action: StuffMajorityAction::DropInstance,
            min_instance_points: 50,
        }
    }
}

impl FusionPolicy {
    /// Default policy using the registry's minimum instance size.
    pub fn for_classes(cfg: &ClassConfig) -> Self {
        Self {
            min_instance_points: cfg.min_instance_points.max(1),
            ..Self::default()
        }
    }
}

fn modal(votes: &BTreeMap<ClassId, usize>, keep: impl Fn(ClassId) -> bool) -> Option<ClassId> {
    // BTreeMap iterates ascending, so a strict `>` keeps the lowest id on ties.
    let mut best: Option<(ClassId, usize)> = None;
    for (&c, &n) in votes.iter().filter(|(&c, _)| keep(c)) {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Majority-vote fusion of per-point semantics and class-agnostic instance ids.
///
/// Surviving instances keep their original ids. Points outside surviving
/// instances keep their semantic labels.
pub fn majority_vote_fuse(
    semantic: &[ClassId],
    instance: &[InstanceId],
    cfg: &ClassConfig,
    policy: &FusionPolicy,
) -> Result<PanopticLabeling> {
    if semantic.len() != instance.len() {
        return Err(Error::LengthMismatch {
            what: "instance labels",
            expected: semantic.len(),
            got: instance.len(),
        });
    }
    let mut votes: BTreeMap<InstanceId, BTreeMap<ClassId, usize>> = BTreeMap::new();
    for (&s, &id) in semantic.iter().zip(instance) {
        if id != 0 {
            *votes.entry(id).or_default().entry(s).or_default() += 1;
        }
    }
    let min = policy.min_instance_points.max(1);
    let decision: BTreeMap<InstanceId, Option<ClassId>> = votes
        .iter()
        .map(|(&id, v)| {
            let size: usize = v.values().sum();
            if size < min {
                return (id, None);
            }
            let top = modal(v, |_| true);
            let class = match top {
                Some(c) if cfg.kind(c) == ClassKind::Things => Some(c),
                _ => match policy.stuff_majority_action {
                    StuffMajorityAction::DropInstance => None,
                    StuffMajorityAction::KeepInstanceAsMajorityThings => modal(v, |c| cfg.is_things(c)),
                },
            };
            (id, class)
        })
        .collect();

    let mut out_sem = semantic.to_vec();
    let mut out_ins = instance.to_vec();
    for (s, id) in out_sem.iter_mut().zip(out_ins.iter_mut()) {
        if *id == 0 {
            continue;
        }
        match decision[id] {
            Some(c) => *s = c,
            None => *id = 0,
        }
    }
    PanopticLabeling::new(out_sem, out_ins)
}

/// Zeroes ids with fewer than `min_pts` points and renumbers the survivors
/// `1..=k` in ascending order of their original id.
pub fn filter_small_instances(instance: &[InstanceId], min_pts: usize) -> Vec<InstanceId> {
    let mut counts: BTreeMap<InstanceId, usize> = BTreeMap::new();
    for &id in instance.iter().filter(|&&id| id != 0) {
        *counts.entry(id).or_default() += 1;
    }
    let mut next = 0;
    let remap: BTreeMap<InstanceId, InstanceId> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_pts.max(1))
        .map(|(id, _)| {
            next += 1;
            (id, next)
        })
        .collect();
    instance.iter().map(|id| remap.get(id).copied().unwrap_or(0)).collect()
}
