//! Parallel evaluation and weight-head training on synthetic scenes.
//!
//! Work is split across scenes with rayon; per-scene results are merged in
//! scene order, so every number is independent of the thread count.

use dsnet_core::cluster::Heuristic;
use std::collections::BTreeMap;

use dsnet_core::dshift::{
    apply_gradient, ds_forward, effective_bandwidth, loss_and_gradient, mean_gradient, DsConfig, HeadDims, Optimizer, TrainSample, WeightHead,
};
use dsnet_core::fusion::FusionPolicy;
use dsnet_core::geom::instance_box_centers;
use dsnet_core::metrics::{MetricReport, PqAccumulator};
use dsnet_core::pipeline::{segment_frame, Algorithm, FrameInput};
use dsnet_core::synth::{generate_scene, simulate_regressed_centers, Regression, Scene, SceneSpec};
use dsnet_core::{ClassConfig, ClassId, Error, PanopticLabeling, Result, Vec3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A generated scene with its simulated regression and ground truth.
#[derive(Debug, Clone)]
pub struct BenchScene {
    pub scene: Scene,
    pub regression: Regression,
    pub gt: PanopticLabeling,
}

impl BenchScene {
    pub fn generate(spec: &SceneSpec) -> Result<Self> {
        let scene = generate_scene(spec)?;
        let regression = simulate_regressed_centers(&scene, &spec.noise, crate::dataset::regression_seed(spec.seed, 0));
        let gt = PanopticLabeling::new(
            scene.frame.semantic.clone().unwrap_or_default(),
            scene.frame.instance.clone().unwrap_or_default(),
        )?;
        Ok(Self { scene, regression, gt })
    }

    /// Training sample over the things points; targets are tight gt box centers.
    pub fn train_sample(&self) -> TrainSample {
        let pos = self.scene.frame.positions();
        let idx: Vec<usize> = (0..pos.len()).filter(|&i| self.gt.instance[i] > 0).collect();
        let boxes = instance_box_centers(&pos, &self.gt.instance);
        TrainSample {
            points: idx.iter().map(|&i| pos[i]).collect(),
            features: self.regression.features.select_rows(&idx),
            centers: idx.iter().map(|&i| self.regression.centers[i]).collect(),
            targets: idx.iter().map(|&i| boxes[&self.gt.instance[i]]).collect::<Vec<Vec3>>(),
        }
    }
}

/// Scenes for seeds `first..first + count` of a spec family.
pub fn generate_benchmark(spec: impl Fn(u64) -> SceneSpec + Sync, first: u64, count: usize) -> Result<Vec<BenchScene>> {
    (first..first + count as u64)
        .into_par_iter()
        .map(|s| BenchScene::generate(&spec(s)))
        .collect()
}

/// Ground-truth semantics with the given clustering, over all scenes.
pub fn predict(
    scenes: &[BenchScene],
    classes: &ClassConfig,
    algorithm: &Algorithm,
    head: Option<&WeightHead>,
    policy: &FusionPolicy,
) -> Result<Vec<PanopticLabeling>> {
    scenes
        .par_iter()
        .map(|b| {
            let pos = b.scene.frame.positions();
            let input = FrameInput {
                points: &pos,
                semantic: &b.gt.semantic,
                centers: &b.regression.centers,
                features: Some(&b.regression.features),
            };
            segment_frame(&input, classes, algorithm, head, policy)
        })
        .collect()
}

/// Panoptic metrics of one clustering over all scenes.
pub fn evaluate(
    scenes: &[BenchScene],
    classes: &ClassConfig,
    algorithm: &Algorithm,
    head: Option<&WeightHead>,
    policy: &FusionPolicy,
) -> Result<MetricReport> {
    let preds = predict(scenes, classes, algorithm, head, policy)?;
    let parts: Vec<PqAccumulator> = preds
        .par_iter()
        .zip(scenes)
        .map(|(p, b)| {
            let mut acc = PqAccumulator::new(classes);
            acc.add_frame(p, &b.gt).map(|_| acc)
        })
        .collect::<Result<_>>()?;
    let mut total = PqAccumulator::new(classes);
    for p in &parts {
        total.merge(p);
    }
    Ok(total.report())
}

/// Weight-head training schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 4,
            lr: 0.002,
            hidden: 32,
            seed: 0,
        }
    }
}

/// Outcome of [`train_head`].
#[derive(Debug, Clone)]
pub struct Training {
    pub head: WeightHead,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Set when training stopped on a non-finite loss; `head` is then the
    /// last finite state.
    pub diverged: Option<Error>,
}

/// Adam training of a fresh head on the given samples.
pub fn train_head(samples: &[TrainSample], ds: &DsConfig, cfg: &TrainConfig) -> Result<Training> {
    ds.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let dims = HeadDims {
        feature_dim: samples[0].features.cols,
        hidden: cfg.hidden,
        candidates: ds.candidates.len(),
        iterations: ds.iterations,
    };
    let mut head = WeightHead::random(dims, &ds.candidates, cfg.seed);
    head.fit_normalization(samples.iter().map(|s| &s.features));
    let mut opt = Optimizer::adam(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch.max(1)) {
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| loss_and_gradient(&samples[i], ds, &head))
                .collect::<Result<_>>()?;
            let (loss, grad) = mean_gradient(&parts);
            if let Err(e) = apply_gradient(&mut head, &mut opt, loss, &grad, step) {
                return Ok(Training {
                    head,
                    epoch_loss,
                    diverged: Some(e),
                });
            }
            step += 1;
            total += loss * batch.len() as f64;
        }
        epoch_loss.push(total / samples.len() as f64);
    }
    Ok(Training {
        head,
        epoch_loss,
        diverged: None,
    })
}

/// Mean-shift bandwidth sweep used as the fixed-bandwidth baseline.
pub const BASELINE_BANDWIDTHS: [f64; 5] = [0.2, 0.65, 1.2, 1.7, 3.2];

/// Heuristic grid for cluster benchmarks.
pub fn heuristic_grid() -> Vec<Algorithm> {
    let mut grid: Vec<Algorithm> = BASELINE_BANDWIDTHS.iter().map(|&b| Algorithm::mean_shift(b)).collect();
    grid.push(Algorithm::Heuristic(Heuristic::Bfs { radius: 0.3, min_pts: 1 }));
    grid.push(Algorithm::Heuristic(Heuristic::Dbscan { eps: 0.3, min_pts: 3 }));
    grid
}

/// Effective bandwidths of one things class, averaged over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBandwidth {
    pub class: ClassId,
    pub name: String,
    /// Mean box length of the class's instances.
    pub mean_extent: f64,
    /// Mean over seeds and iterations.
    pub mean_bandwidth: f64,
    pub per_iteration: Vec<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthStats {
    pub per_class: Vec<ClassBandwidth>,
    /// Mean over all seeds, per iteration.
    pub per_iteration: Vec<f64>,
}

/// Runs dynamic shifting on the things points of every scene and groups the
/// seeds' effective bandwidths by ground-truth class.
pub fn bandwidth_stats(
    scenes: &[BenchScene],
    classes: &ClassConfig,
    ds: &DsConfig,
    head: &WeightHead,
) -> Result<BandwidthStats> {
    // per class: (sum of extents, instances, per-iteration sums, seeds)
    type Acc = BTreeMap<ClassId, (f64, usize, Vec<f64>, usize)>;
    let parts: Vec<Acc> = scenes
        .par_iter()
        .map(|b| {
            let mut acc = Acc::new();
            for bx in &b.scene.boxes {
                let e = acc.entry(bx.class).or_insert_with(|| (0.0, 0, vec![0.0; ds.iterations], 0));
                e.0 += bx.size[0];
                e.1 += 1;
            }
            let s = b.train_sample();
            if s.points.is_empty() {
                return Ok(acc);
            }
            let idx: Vec<usize> = (0..b.gt.len()).filter(|&i| b.gt.instance[i] > 0).collect();
            let out = ds_forward(&s.points, &s.features, &s.centers, ds, head)?;
            for (it, w) in out.weights.iter().enumerate() {
                let bw = effective_bandwidth(w, &ds.candidates);
                for (k, &seed) in out.seeds.iter().enumerate() {
                    let class = b.gt.semantic[idx[seed]];
                    let e = acc.entry(class).or_insert_with(|| (0.0, 0, vec![0.0; ds.iterations], 0));
                    e.2[it] += bw[k];
                    if it == 0 {
                        e.3 += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Acc::new();
    for part in parts {
        for (c, (ext, n, its, seeds)) in part {
            let e = total.entry(c).or_insert_with(|| (0.0, 0, vec![0.0; ds.iterations], 0));
            e.0 += ext;
            e.1 += n;
            for (a, b) in e.2.iter_mut().zip(its) {
                *a += b;
            }
            e.3 += seeds;
        }
    }
    let seeds: usize = total.values().map(|t| t.3).sum();
    let per_iteration = (0..ds.iterations)
        .map(|it| total.values().map(|t| t.2[it]).sum::<f64>() / seeds.max(1) as f64)
        .collect();
    let per_class = total
        .into_iter()
        .filter(|(c, t)| classes.is_things(*c) && t.3 > 0)
        .map(|(class, (ext, n, its, seeds))| {
            let per_iteration: Vec<f64> = its.iter().map(|s| s / seeds as f64).collect();
            ClassBandwidth {
                class,
                name: classes.name(class).unwrap_or("?").to_string(),
                mean_extent: ext / n.max(1) as f64,
                mean_bandwidth: per_iteration.iter().sum::<f64>() / per_iteration.len().max(1) as f64,
                per_iteration,
                seeds,
            }
        })
        .collect();
    Ok(BandwidthStats {
        per_class,
        per_iteration,
    })
}

/// Average ranks, 1-based; ties share the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// `None` for fewer than two pairs or a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}
