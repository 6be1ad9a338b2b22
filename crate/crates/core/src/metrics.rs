//! Panoptic (PQ/SQ/RQ, PQ†, mIoU) and tracking (LSTQ) evaluation.
//!
//! Points whose ground-truth class is `ignore` (or unknown to the registry)
//! are removed before any counting. Segments:
//! * things: points sharing `(class, id)` with `id > 0`; things points with
//!   id 0 only contribute to class IoU;
//! * stuff: all points of the class in one frame form one segment.
//!
//! A predicted and a ground-truth segment of the same class match iff their
//! IoU is strictly above 0.5, which makes the matching unique.
//! Accumulators merge by addition, so per-frame work can be split and merged
//! in any order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::{ClassConfig, ClassId, ClassKind, Error, InstanceId, PanopticLabeling, Result};

/// `|pred ∩ gt| / |pred ∪ gt|` over point index sets.
pub fn segment_iou(pred: &[usize], gt: &[usize]) -> Result<f64> {
    let p: BTreeSet<usize> = pred.iter().copied().collect();
    let g: BTreeSet<usize> = gt.iter().copied().collect();
    let inter = p.intersection(&g).count();
    let union = p.len() + g.len() - inter;
    if union == 0 {
        return Err(Error::Undefined("IoU of two empty segments"));
    }
    Ok(inter as f64 / union as f64)
}

fn check_len(pred: &PanopticLabeling, gt: &PanopticLabeling) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predicted points",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Per-class intersection and union point counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IouAccumulator {
    inter: BTreeMap<ClassId, u64>,
    union: BTreeMap<ClassId, u64>,
}

impl IouAccumulator {
    pub fn add(&mut self, pred: &[ClassId], gt: &[ClassId], cfg: &ClassConfig) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch {
                what: "predicted classes",
                expected: gt.len(),
                got: pred.len(),
            });
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if cfg.kind(g) == ClassKind::Ignore {
                continue;
            }
            *self.union.entry(g).or_default() += 1;
            if p == g {
                *self.inter.entry(g).or_default() += 1;
            } else if cfg.kind(p) != ClassKind::Ignore {
                *self.union.entry(p).or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (c, n) in &other.inter {
            *self.inter.entry(*c).or_default() += n;
        }
        for (c, n) in &other.union {
            *self.union.entry(*c).or_default() += n;
        }
    }

    /// IoU of every class seen in ground truth or prediction.
    pub fn per_class(&self) -> BTreeMap<ClassId, f64> {
        self.union
            .iter()
            .filter(|(_, &u)| u > 0)
            .map(|(&c, &u)| (c, self.inter.get(&c).copied().unwrap_or(0) as f64 / u as f64))
            .collect()
    }

    /// Mean over seen classes; 0 when nothing was seen.
    pub fn mean(&self) -> f64 {
        mean(self.per_class().values().copied())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean class IoU over classes present in ground truth or prediction.
pub fn mean_iou(pred: &[ClassId], gt: &[ClassId], cfg: &ClassConfig) -> Result<f64> {
    let mut acc = IouAccumulator::default();
    acc.add(pred, gt, cfg)?;
    Ok(acc.mean())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PqCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
    iou_sum: f64,
}

/// Segment key inside one frame: class plus instance id (0 for stuff).
fn segment_key(class: ClassId, id: InstanceId, cfg: &ClassConfig) -> Option<(ClassId, InstanceId)> {
    match cfg.kind(class) {
        ClassKind::Stuff => Some((class, 0)),
        ClassKind::Things if id > 0 => Some((class, id)),
        _ => None,
    }
}

/// PQ/SQ/RQ counts accumulated over frames, plus class IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct PqAccumulator {
    cfg: ClassConfig,
    counts: BTreeMap<ClassId, PqCounts>,
    iou: IouAccumulator,
}

impl PqAccumulator {
    pub fn new(cfg: &ClassConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            counts: BTreeMap::new(),
            iou: IouAccumulator::default(),
        }
    }

    pub fn add_frame(&mut self, pred: &PanopticLabeling, gt: &PanopticLabeling) -> Result<()> {
        check_len(pred, gt)?;
        self.iou.add(&pred.semantic, &gt.semantic, &self.cfg)?;
        let cfg = &self.cfg;
        let mut gt_size: BTreeMap<(ClassId, InstanceId), u64> = BTreeMap::new();
        let mut pred_size: BTreeMap<(ClassId, InstanceId), u64> = BTreeMap::new();
        let mut inter: BTreeMap<((ClassId, InstanceId), InstanceId), u64> = BTreeMap::new();
        for i in 0..gt.len() {
            if cfg.kind(gt.semantic[i]) == ClassKind::Ignore {
                continue;
            }
            let g = segment_key(gt.semantic[i], gt.instance[i], cfg);
            let p = segment_key(pred.semantic[i], pred.instance[i], cfg);
            if let Some(g) = g {
                *gt_size.entry(g).or_default() += 1;
            }
            if let Some(p) = p {
                *pred_size.entry(p).or_default() += 1;
            }
            if let (Some(g), Some(p)) = (g, p) {
                if g.0 == p.0 {
                    *inter.entry((g, p.1)).or_default() += 1;
                }
            }
        }
        let mut matched_gt = BTreeSet::new();
        let mut matched_pred = BTreeSet::new();
        for (&(g, pid), &n) in &inter {
            let p = (g.0, pid);
            let union = gt_size[&g] + pred_size[&p] - n;
            let iou = n as f64 / union as f64;
            if iou > 0.5 {
                let c = self.counts.entry(g.0).or_default();
                c.tp += 1;
                c.iou_sum += iou;
                matched_gt.insert(g);
                matched_pred.insert(p);
            }
        }
        for g in gt_size.keys().filter(|g| !matched_gt.contains(*g)) {
            self.counts.entry(g.0).or_default().fn_ += 1;
        }
        for p in pred_size.keys().filter(|p| !matched_pred.contains(*p)) {
            self.counts.entry(p.0).or_default().fp += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (c, o) in &other.counts {
            let s = self.counts.entry(*c).or_default();
            s.tp += o.tp;
            s.fp += o.fp;
            s.fn_ += o.fn_;
            s.iou_sum += o.iou_sum;
        }
        self.iou.merge(&other.iou);
    }

    pub fn report(&self) -> MetricReport {
        let ious = self.iou.per_class();
        let mut per_class = Vec::new();
        for info in self.cfg.evaluated() {
            let c = self.counts.get(&info.id).copied().unwrap_or_default();
            let iou = ious.get(&info.id).copied();
            if c.tp + c.fp + c.fn_ == 0 && iou.is_none() {
                continue;
            }
            let sq = if c.tp > 0 { c.iou_sum / c.tp as f64 } else { 0.0 };
            let denom = c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64;
            let rq = if denom > 0.0 { c.tp as f64 / denom } else { 0.0 };
            per_class.push(ClassMetrics {
                class: info.id,
                name: info.name.clone(),
                kind: info.kind,
                pq: sq * rq,
                sq,
                rq,
                iou: iou.unwrap_or(0.0),
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                has_segments: c.tp + c.fp + c.fn_ > 0,
            });
        }
        MetricReport::from_classes(per_class, self.iou.mean())
    }
}

/// Metrics of one class over the evaluation set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassMetrics {
    pub class: ClassId,
    pub name: String,
    pub kind: ClassKind,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
    /// False when the class only appears on points without a segment.
    pub has_segments: bool,
}

/// Per-class and aggregate panoptic metrics, all in `[0, 1]`.
///
/// Aggregates average over classes with at least one segment; an empty
/// subset averages to 0. `miou` averages over classes seen in ground truth
/// or prediction.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub pq: f64,
    pub pq_dagger: f64,
    pub rq: f64,
    pub sq: f64,
    pub pq_th: f64,
    pub rq_th: f64,
    pub sq_th: f64,
    pub pq_st: f64,
    pub rq_st: f64,
    pub sq_st: f64,
    pub miou: f64,
}

impl MetricReport {
    fn from_classes(per_class: Vec<ClassMetrics>, miou: f64) -> Self {
        let seg = || per_class.iter().filter(|c| c.has_segments);
        let of = |kind: Option<ClassKind>, f: fn(&ClassMetrics) -> f64| {
            mean(seg().filter(|c| kind.is_none_or(|k| c.kind == k)).map(f))
        };
        Self {
            pq: of(None, |c| c.pq),
            pq_dagger: mean(seg().map(|c| if c.kind == ClassKind::Stuff { c.iou } else { c.pq })),
            rq: of(None, |c| c.rq),
            sq: of(None, |c| c.sq),
            pq_th: of(Some(ClassKind::Things), |c| c.pq),
            rq_th: of(Some(ClassKind::Things), |c| c.rq),
            sq_th: of(Some(ClassKind::Things), |c| c.sq),
            pq_st: of(Some(ClassKind::Stuff), |c| c.pq),
            rq_st: of(Some(ClassKind::Stuff), |c| c.rq),
            sq_st: of(Some(ClassKind::Stuff), |c| c.sq),
            miou,
            per_class,
        }
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == id)
    }

    /// Fixed-name scalar fields, in report order.
    pub fn fields(&self) -> [(&'static str, f64); 11] {
        [
            ("pq", self.pq),
            ("pq_dagger", self.pq_dagger),
            ("rq", self.rq),
            ("sq", self.sq),
            ("pq_th", self.pq_th),
            ("rq_th", self.rq_th),
            ("sq_th", self.sq_th),
            ("pq_st", self.pq_st),
            ("rq_st", self.rq_st),
            ("sq_st", self.sq_st),
            ("miou", self.miou),
        ]
    }
}

/// Panoptic quality over a set of frames.
pub fn panoptic_quality(preds: &[PanopticLabeling], gts: &[PanopticLabeling], cfg: &ClassConfig) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            what: "predicted frames",
            expected: gts.len(),
            got: preds.len(),
        });
    }
    let mut acc = PqAccumulator::new(cfg);
    for (p, g) in preds.iter().zip(gts) {
        acc.add_frame(p, g)?;
    }
    Ok(acc.report())
}

/// Track key: sequence index and id.
type TrackKey = (u32, InstanceId);

/// LSTQ state: class IoU plus whole-sequence track overlaps.
///
/// Ground-truth tracks are the things points with id > 0; predicted tracks
/// are the points with predicted id > 0. Tracks from different sequences
/// never share a key.
#[derive(Debug, Clone, PartialEq)]
pub struct LstqAccumulator {
    cfg: ClassConfig,
    sequence: u32,
    iou: IouAccumulator,
    gt_size: BTreeMap<TrackKey, u64>,
    pred_size: BTreeMap<TrackKey, u64>,
    tpa: BTreeMap<(TrackKey, TrackKey), u64>,
}

impl LstqAccumulator {
    pub fn new(cfg: &ClassConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            sequence: 0,
            iou: IouAccumulator::default(),
            gt_size: BTreeMap::new(),
            pred_size: BTreeMap::new(),
            tpa: BTreeMap::new(),
        }
    }

    /// Subsequent frames belong to a new sequence.
    pub fn start_sequence(&mut self, index: u32) {
        self.sequence = index;
    }

    pub fn add_frame(&mut self, pred: &PanopticLabeling, gt: &PanopticLabeling) -> Result<()> {
        check_len(pred, gt)?;
        self.iou.add(&pred.semantic, &gt.semantic, &self.cfg)?;
        let s = self.sequence;
        for i in 0..gt.len() {
            let gk = gt.semantic[i];
            if self.cfg.kind(gk) == ClassKind::Ignore {
                continue;
            }
            let g = (self.cfg.is_things(gk) && gt.instance[i] > 0).then_some((s, gt.instance[i]));
            let p = (pred.instance[i] > 0).then_some((s, pred.instance[i]));
            if let Some(g) = g {
                *self.gt_size.entry(g).or_default() += 1;
            }
            if let Some(p) = p {
                *self.pred_size.entry(p).or_default() += 1;
            }
            if let (Some(g), Some(p)) = (g, p) {
                *self.tpa.entry((g, p)).or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.iou.merge(&other.iou);
        for (k, n) in &other.gt_size {
            *self.gt_size.entry(*k).or_default() += n;
        }
        for (k, n) in &other.pred_size {
            *self.pred_size.entry(*k).or_default() += n;
        }
        for (k, n) in &other.tpa {
            *self.tpa.entry(*k).or_default() += n;
        }
    }

    pub fn report(&self) -> Result<TrackReport> {
        if self.gt_size.is_empty() {
            return Err(Error::Undefined("association score without ground-truth tracks"));
        }
        let mut per_track: BTreeMap<TrackKey, f64> = BTreeMap::new();
        for (&(g, p), &n) in &self.tpa {
            let (gs, ps) = (self.gt_size[&g], self.pred_size[&p]);
            let iou = n as f64 / (gs + ps - n) as f64;
            *per_track.entry(g).or_default() += n as f64 * iou;
        }
        let s_assoc = mean(
            self.gt_size
                .iter()
                .map(|(g, &size)| per_track.get(g).copied().unwrap_or(0.0) / size as f64),
        );
        let per_class_iou: Vec<(ClassId, f64)> = self
            .iou
            .per_class()
            .into_iter()
            .filter(|(c, _)| self.cfg.kind(*c) != ClassKind::Ignore)
            .collect();
        let s_cls = mean(per_class_iou.iter().map(|(_, v)| *v));
        Ok(TrackReport {
            lstq: libm::sqrt(s_assoc * s_cls),
            s_assoc,
            s_cls,
            per_class_iou,
        })
    }
}

/// Sequence-level tracking quality.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrackReport {
    pub lstq: f64,
    pub s_assoc: f64,
    pub s_cls: f64,
    pub per_class_iou: Vec<(ClassId, f64)>,
}

impl TrackReport {
    pub fn fields(&self) -> [(&'static str, f64); 3] {
        [("lstq", self.lstq), ("s_assoc", self.s_assoc), ("s_cls", self.s_cls)]
    }
}

/// LSTQ of one sequence whose predicted ids are consistent over time.
pub fn lstq(preds: &[PanopticLabeling], gts: &[PanopticLabeling], cfg: &ClassConfig) -> Result<TrackReport> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            what: "predicted frames",
            expected: gts.len(),
            got: preds.len(),
        });
    }
    let mut acc = LstqAccumulator::new(cfg);
    for (p, g) in preds.iter().zip(gts) {
        acc.add_frame(p, g)?;
    }
    acc.report()
}

#[cfg(test)]
mod tests;
