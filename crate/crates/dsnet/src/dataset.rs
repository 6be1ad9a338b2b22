//! Sequences on disk: loading, synthetic export and file-backed regression.

use std::path::Path;

use dsnet_core::dshift::WeightHead;
use dsnet_core::fusion::FusionPolicy;
use dsnet_core::geom::align_frame;
use dsnet_core::pipeline::{segment_frame, Algorithm, FrameInput};
use dsnet_core::synth::{point_features, simulate_regressed_centers, NoiseModel, Scene};
use dsnet_core::temporal::{run_4d_pipeline, FusedWindow, TemporalConfig, WindowRegressor};
use dsnet_core::{ClassConfig, Frame, Matrix, PanopticLabeling, Vec3};
use rayon::prelude::*;

use crate::io::{self, SequenceDir};
use crate::{Error, Result};

/// Seed of the simulated regression of frame `t` of a scene seeded `seed`.
pub fn regression_seed(seed: u64, t: usize) -> u64 {
    (seed ^ 0x5eed).wrapping_add(t as u64)
}

/// Writes scans, labels, poses, identity calibration, regressed centers and
/// features of one generated sequence.
pub fn write_synthetic_sequence(dir: &SequenceDir, scenes: &[Scene], noise: &NoiseModel, seed: u64) -> Result<()> {
    scenes.par_iter().enumerate().try_for_each(|(t, s)| -> Result<()> {
        let f = &s.frame;
        io::write_points(&dir.scan(t), &f.points)?;
        let labels = PanopticLabeling::new(
            f.semantic.clone().unwrap_or_else(|| vec![0; f.len()]),
            f.instance.clone().unwrap_or_else(|| vec![0; f.len()]),
        )?;
        io::write_labels(&dir.labels(t), &labels)?;
        let reg = simulate_regressed_centers(s, noise, regression_seed(seed, t));
        io::write_centers(&dir.centers(t), &reg.centers)?;
        io::write_features(&dir.features(t), &reg.features)
    })?;
    let poses: Vec<[f64; 12]> = scenes
        .iter()
        .map(|s| s.frame.pose.unwrap_or_else(dsnet_core::Pose::identity).to_matrix_3x4())
        .collect();
    io::write_pose_matrices(&dir.poses(), &poses)?;
    io::write_atomic(&dir.calib(), io::identity_calibration().as_bytes())
}

/// A loaded sequence. Frames carry ground-truth labels as semantics and
/// instances when a `labels` directory exists.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: u32,
    pub frame_ids: Vec<usize>,
    pub frames: Vec<Frame>,
    pub centers: Vec<Vec<Vec3>>,
    /// Absent when the sequence has no `features` directory.
    pub features: Option<Vec<Matrix>>,
}

/// Loads scans, labels, regressed centers and, when present, features and poses.
pub fn load_sequence(dataset: &Path, id: u32) -> Result<Sequence> {
    let dir = SequenceDir::new(dataset, id);
    let frame_ids = dir.frames_in("velodyne", "bin")?;
    let has_features = dir.root.join("features").is_dir();
    let poses = if dir.poses().is_file() {
        Some(io::read_poses(&dir.poses(), &dir.calib())?)
    } else {
        None
    };
    if let Some(p) = &poses {
        if let Some(&bad) = frame_ids.iter().find(|&&t| t >= p.len()) {
            return Err(Error::CountMismatch {
                path: dir.poses(),
                expected: bad + 1,
                got: p.len(),
            });
        }
    }
    let loaded: Vec<(Frame, Vec<Vec3>, Option<Matrix>)> = frame_ids
        .par_iter()
        .map(|&t| {
            let points = io::read_points(&dir.scan(t))?;
            let n = points.len();
            let labels = io::read_labels(&dir.labels(t), Some(n))?;
            let centers = io::read_centers(&dir.centers(t), n)?;
            let features = if has_features {
                Some(io::read_features(&dir.features(t), n)?)
            } else {
                None
            };
            let frame = Frame {
                points,
                semantic: Some(labels.semantic),
                instance: Some(labels.instance),
                pose: poses.as_ref().map(|p| p[t]),
                timestamp_index: t,
            };
            Ok((frame, centers, features))
        })
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(loaded.len());
    let mut centers = Vec::with_capacity(loaded.len());
    let mut features = Vec::with_capacity(loaded.len());
    for (f, c, x) in loaded {
        frames.push(f);
        centers.push(c);
        features.extend(x);
    }
    Ok(Sequence {
        id,
        frame_ids,
        frames,
        centers,
        features: has_features.then_some(features),
    })
}

/// Per-frame centers aligned into the window's first frame. Features are
/// recomputed on the fused window from the aligned centers.
#[derive(Debug, Clone)]
pub struct FileRegressor<'a> {
    pub frames: &'a [Frame],
    pub centers: &'a [Vec<Vec3>],
    pub classes: &'a ClassConfig,
}

impl WindowRegressor for FileRegressor<'_> {
    fn regress(
        &mut self,
        start: usize,
        fused: &FusedWindow,
    ) -> dsnet_core::Result<(Vec<Vec3>, Option<Matrix>)> {
        let k = fused.num_frames();
        let reference = self.frames[start]
            .pose
            .ok_or(dsnet_core::Error::MissingPose(start))?;
        let mut centers = Vec::with_capacity(fused.len());
        let mut things = Vec::with_capacity(fused.len());
        for (f, c) in self.frames[start..start + k].iter().zip(&self.centers[start..start + k]) {
            let pose = f.pose.ok_or(dsnet_core::Error::MissingPose(f.timestamp_index))?;
            centers.extend(align_frame(c, &pose, &reference)?);
            let sem = f.semantic.as_deref().unwrap_or_default();
            things.extend(sem.iter().map(|&s| self.classes.is_things(s)));
        }
        let features = point_features(&fused.points, &things, &centers);
        Ok((centers, Some(features)))
    }
}

/// Panoptic predictions for every frame of a sequence, using the frames'
/// semantic labels as the semantic prediction.
pub fn segment_sequence(
    seq: &Sequence,
    classes: &ClassConfig,
    algorithm: &Algorithm,
    head: Option<&WeightHead>,
    policy: &FusionPolicy,
    window: usize,
) -> Result<Vec<PanopticLabeling>> {
    if window > 1 {
        let cfg = TemporalConfig {
            window,
            algorithm: algorithm.clone(),
            policy: *policy,
        };
        let mut reg = FileRegressor {
            frames: &seq.frames,
            centers: &seq.centers,
            classes,
        };
        return Ok(run_4d_pipeline(&seq.frames, classes, &cfg, head, &mut reg)?);
    }
    let computed: Vec<Option<Matrix>>;
    let features: Vec<Option<&Matrix>> = match &seq.features {
        Some(f) => f.iter().map(Some).collect(),
        None if matches!(algorithm, Algorithm::DynamicShift(_)) => {
            computed = seq
                .frames
                .iter()
                .zip(&seq.centers)
                .map(|(f, c)| {
                    let sem = f.semantic.as_deref().unwrap_or_default();
                    let things: Vec<bool> = sem.iter().map(|&s| classes.is_things(s)).collect();
                    Some(point_features(&f.points, &things, c))
                })
                .collect();
            computed.iter().map(Option::as_ref).collect()
        }
        None => vec![None; seq.frames.len()],
    };
    seq.frames
        .par_iter()
        .zip(&seq.centers)
        .zip(features)
        .map(|((f, c), x)| {
            let pos = f.positions();
            let input = FrameInput {
                points: &pos,
                semantic: f.semantic.as_deref().unwrap_or_default(),
                centers: c,
                features: x,
            };
            Ok(segment_frame(&input, classes, algorithm, head, policy)?)
        })
        .collect()
}

/// Sequence id, ground-truth frames and predicted frames.
pub type EvalSequence = (u32, Vec<PanopticLabeling>, Vec<PanopticLabeling>);

/// Ground truth and predictions of one dataset pair, frame-aligned.
pub fn load_eval_pairs(gt: &Path, pred: &Path) -> Result<Vec<EvalSequence>> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let pred_seqs = io::list_sequences(pred).unwrap_or_default();
    let gt_seqs = io::list_sequences(gt)?;
    for &s in pred_seqs.iter().filter(|s| !gt_seqs.contains(s)) {
        problems.push(format!("sequence {s:02} has predictions but no ground truth"));
    }
    for s in gt_seqs {
        let gdir = SequenceDir::new(gt, s);
        let pdir = SequenceDir::new(pred, s);
        let gframes = gdir.frames_in("labels", "label")?;
        let pframes = pdir.frames_in("predictions", "label").unwrap_or_default();
        for t in gframes.iter().filter(|t| !pframes.contains(t)) {
            problems.push(format!("{s:02}/{t:06} missing prediction"));
        }
        for t in pframes.iter().filter(|t| !gframes.contains(t)) {
            problems.push(format!("{s:02}/{t:06} has no ground truth"));
        }
        if !problems.is_empty() {
            continue;
        }
        let pairs: Vec<(PanopticLabeling, PanopticLabeling)> = gframes
            .par_iter()
            .map(|&t| {
                let g = io::read_labels(&gdir.labels(t), None)?;
                let p = io::read_labels(&pdir.predictions(t), Some(g.len()))?;
                Ok((g, p))
            })
            .collect::<Result<_>>()?;
        let (g, p) = pairs.into_iter().unzip();
        out.push((s, g, p));
    }
    if !problems.is_empty() {
        return Err(Error::FrameMismatch(problems.join("; ")));
    }
    Ok(out)
}
