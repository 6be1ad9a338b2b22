//! Dynamic shifting: learnable multi-bandwidth flat-kernel shifts.
//!
//! Each iteration mixes `l` flat-kernel shift targets with per-seed softmax
//! weights produced by an iteration-specific head:
//! `X <- X + eta * (sum_j W[:, j] * (D_j^-1 K_j X) - X)`.
//! Training minimizes the weighted sum over iterations of the mean L1
//! distance between seeds and their ground-truth centers. Gradients are
//! propagated through the recurrence with the masks `K_j` frozen at their
//! forward values.

mod head;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use head::{weight_head_forward, HeadCache, HeadDims, WeightHead, HEAD_MAGIC, HEAD_VERSION};

use crate::cluster::{ClusterResult, Heuristic, MeanShiftParams};
use crate::geom::{self, FpsStart, Neighborhoods};
use crate::{Error, InstanceId, Matrix, Result, Vec3};

/// Dynamic-shifting hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DsConfig {
    /// Bandwidth candidates `L` in meters.
    pub candidates: Vec<f64>,
    pub iterations: usize,
    /// Shift scaling factor.
    pub eta: f64,
    /// Number of farthest-point seeds `M'`.
    pub fps_count: usize,
    /// Clustering applied to the converged seeds.
    pub final_cluster: Heuristic,
    /// Per-iteration loss weights `w_i`.
    pub loss_weights: Vec<f64>,
    /// Treat each iteration's input seeds as constants during backprop.
    pub detach_iterations: bool,
}

impl Default for DsConfig {
    fn default() -> Self {
        Self {
            candidates: vec![0.2, 1.7, 3.2],
            iterations: 4,
            eta: 1.0,
            fps_count: 10_000,
            final_cluster: Heuristic::MeanShift(MeanShiftParams::with_bandwidth(0.65)),
            loss_weights: vec![1.0; 4],
            detach_iterations: false,
        }
    }
}

impl DsConfig {
    pub fn with_candidates(mut self, candidates: &[f64]) -> Self {
        self.candidates = candidates.to_vec();
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.loss_weights = vec![1.0; iterations];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() || self.candidates.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidConfig("bandwidth candidates must be positive and non-empty".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        if self.fps_count == 0 {
            return Err(Error::InvalidConfig("fps_count must be positive".into()));
        }
        if self.loss_weights.len() != self.iterations {
            return Err(Error::InvalidConfig(format!(
                "{} loss weights for {} iterations",
                self.loss_weights.len(),
                self.iterations
            )));
        }
        Ok(())
    }

    fn check_head(&self, head: &WeightHead, feature_cols: usize) -> Result<()> {
        self.validate()?;
        if head.dims.candidates != self.candidates.len() {
            return Err(Error::LengthMismatch {
                what: "head candidates",
                expected: self.candidates.len(),
                got: head.dims.candidates,
            });
        }
        if head.dims.iterations < self.iterations {
            return Err(Error::LengthMismatch {
                what: "head iterations",
                expected: self.iterations,
                got: head.dims.iterations,
            });
        }
        if head.dims.feature_dim != feature_cols {
            return Err(Error::LengthMismatch {
                what: "feature columns",
                expected: head.dims.feature_dim,
                got: feature_cols,
            });
        }
        Ok(())
    }
}

/// Intermediates of one shift iteration.
struct ShiftRecord {
    neighborhoods: Vec<Neighborhoods>,
    means: Vec<Vec<Vec3>>,
    out: Vec<Vec3>,
}

fn shift(x: &[Vec3], weights: &Matrix, candidates: &[f64], eta: f64) -> ShiftRecord {
    let neighborhoods: Vec<Neighborhoods> = candidates.iter().map(|&d| Neighborhoods::build(x, d)).collect();
    let means: Vec<Vec<Vec3>> = neighborhoods.iter().map(|nb| nb.means(x)).collect();
    let out = x
        .iter()
        .enumerate()
        .map(|(r, xr)| {
            let w = weights.row(r);
            let mut target = [0.0; 3];
            for (j, m) in means.iter().enumerate() {
                for a in 0..3 {
                    target[a] += w[j] * m[r][a];
                }
            }
            if eta == 1.0 {
                target
            } else {
                [
                    xr[0] + eta * (target[0] - xr[0]),
                    xr[1] + eta * (target[1] - xr[1]),
                    xr[2] + eta * (target[2] - xr[2]),
                ]
            }
        })
        .collect();
    ShiftRecord {
        neighborhoods,
        means,
        out,
    }
}

/// One dynamic-shifting iteration with per-seed candidate weights `weights` (M'×l).
pub fn ds_iteration(x: &[Vec3], weights: &Matrix, candidates: &[f64], eta: f64) -> Result<Vec<Vec3>> {
    if weights.rows != x.len() || weights.cols != candidates.len() {
        return Err(Error::LengthMismatch {
            what: "candidate weights",
            expected: x.len() * candidates.len(),
            got: weights.rows * weights.cols,
        });
    }
    Ok(shift(x, weights, candidates, eta).out)
}

/// Result of [`ds_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DsOutput {
    /// Labels for all input points.
    pub clusters: ClusterResult,
    /// Indices of the seeding points.
    pub seeds: Vec<usize>,
    /// Seed positions `X_0 .. X_I`.
    pub trajectory: Vec<Vec<Vec3>>,
    /// Candidate weights `W_1 .. W_I`.
    pub weights: Vec<Matrix>,
}

impl DsOutput {
    /// Mean effective bandwidth of the seeds at every iteration.
    pub fn mean_bandwidths(&self, candidates: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let bw = effective_bandwidth(w, candidates);
                bw.iter().sum::<f64>() / bw.len().max(1) as f64
            })
            .collect()
    }
}

/// Full inference pass: FPS seeding, `I` shift iterations, heuristic
/// clustering of the converged seeds and nearest-seed label propagation.
pub fn ds_forward(
    points: &[Vec3],
    features: &Matrix,
    centers: &[Vec3],
    cfg: &DsConfig,
    head: &WeightHead,
) -> Result<DsOutput> {
    check_inputs(points, features, centers)?;
    cfg.check_head(head, features.cols)?;
    if points.is_empty() {
        return Ok(DsOutput {
            clusters: ClusterResult::default(),
            seeds: Vec::new(),
            trajectory: Vec::new(),
            weights: Vec::new(),
        });
    }
    let seeds = geom::farthest_point_sampling(points, cfg.fps_count, FpsStart::Lowest);
    let seed_features = features.select_rows(&seeds);
    let mut trajectory = vec![seeds.iter().map(|&i| centers[i]).collect::<Vec<Vec3>>()];
    let mut weights = Vec::with_capacity(cfg.iterations);
    for i in 0..cfg.iterations {
        let w = head.forward(&seed_features, i)?;
        let next = shift(&trajectory[i], &w, &cfg.candidates, cfg.eta).out;
        trajectory.push(next);
        weights.push(w);
    }
    let seed_clusters = cfg.final_cluster.run(trajectory.last().unwrap());
    let clusters = if seeds.len() == points.len() {
        seed_clusters
    } else {
        let seed_pos: Vec<Vec3> = seeds.iter().map(|&i| points[i]).collect();
        let cell = cfg.candidates.iter().copied().fold(0.0, f64::max);
        let nearest = geom::nearest_neighbor_assign_with_cell(points, &seed_pos, cell)?;
        ClusterResult {
            ids: nearest.iter().map(|&s| seed_clusters.ids[s]).collect(),
            modes: seed_clusters.modes,
        }
    };
    Ok(DsOutput {
        clusters,
        seeds,
        trajectory,
        weights,
    })
}

fn check_inputs(points: &[Vec3], features: &Matrix, centers: &[Vec3]) -> Result<()> {
    if features.rows != points.len() {
        return Err(Error::LengthMismatch {
            what: "feature rows",
            expected: points.len(),
            got: features.rows,
        });
    }
    if centers.len() != points.len() {
        return Err(Error::LengthMismatch {
            what: "regressed centers",
            expected: points.len(),
            got: centers.len(),
        });
    }
    Ok(())
}

fn l1_mean(x: &[Vec3], target: &[Vec3]) -> f64 {
    let total: f64 = x
        .iter()
        .zip(target)
        .map(|(a, b)| libm::fabs(a[0] - b[0]) + libm::fabs(a[1] - b[1]) + libm::fabs(a[2] - b[2]))
        .sum();
    total / x.len() as f64
}

/// `sum_i w_i * mean_x |X_i[x] - C'[x]|_1` over the trajectory `X_1 .. X_I`.
pub fn ds_loss(trajectory: &[Vec<Vec3>], targets: &[Vec3], weights: &[f64]) -> Result<f64> {
    if trajectory.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "loss weights",
            expected: trajectory.len(),
            got: weights.len(),
        });
    }
    let mut loss = 0.0;
    for (x, &w) in trajectory.iter().zip(weights) {
        if x.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "trajectory rows",
                expected: targets.len(),
                got: x.len(),
            });
        }
        if !x.is_empty() {
            loss += w * l1_mean(x, targets);
        }
    }
    Ok(loss)
}

/// Per-seed effective bandwidth `W · L`.
pub fn effective_bandwidth(weights: &Matrix, candidates: &[f64]) -> Vec<f64> {
    (0..weights.rows)
        .map(|r| weights.row(r).iter().zip(candidates).map(|(w, c)| w * c).sum())
        .collect()
}

/// Offsets from each things point to its instance's tight-box center.
pub fn center_offset_target(points: &[Vec3], instance: &[InstanceId]) -> Result<Vec<Vec3>> {
    if points.len() != instance.len() {
        return Err(Error::LengthMismatch {
            what: "instance ids",
            expected: points.len(),
            got: instance.len(),
        });
    }
    if let Some(index) = instance.iter().position(|&id| id == 0) {
        return Err(Error::MissingInstance { index });
    }
    let centers = geom::instance_box_centers(points, instance);
    Ok(points
        .iter()
        .zip(instance)
        .map(|(p, id)| geom::sub(&centers[id], p))
        .collect())
}

/// One training example: things points, their features, regressed centers
/// and ground-truth centers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub points: Vec<Vec3>,
    pub features: Matrix,
    pub centers: Vec<Vec3>,
    pub targets: Vec<Vec3>,
}

/// Loss and its gradient with respect to `head.params` for one sample.
pub fn loss_and_gradient(sample: &TrainSample, cfg: &DsConfig, head: &WeightHead) -> Result<(f64, Vec<f64>)> {
    check_inputs(&sample.points, &sample.features, &sample.centers)?;
    cfg.check_head(head, sample.features.cols)?;
    if sample.targets.len() != sample.points.len() {
        return Err(Error::LengthMismatch {
            what: "target centers",
            expected: sample.points.len(),
            got: sample.targets.len(),
        });
    }
    let mut grad = vec![0.0; head.params.len()];
    if sample.points.is_empty() {
        return Ok((0.0, grad));
    }
    let seeds = geom::farthest_point_sampling(&sample.points, cfg.fps_count, FpsStart::Lowest);
    let m = seeds.len();
    let features = sample.features.select_rows(&seeds);
    let targets: Vec<Vec3> = seeds.iter().map(|&i| sample.targets[i]).collect();
    let mut trajectory = vec![seeds.iter().map(|&i| sample.centers[i]).collect::<Vec<Vec3>>()];
    let mut caches = Vec::with_capacity(cfg.iterations);
    let mut records = Vec::with_capacity(cfg.iterations);
    for i in 0..cfg.iterations {
        let cache = head.forward_cached(&features, i)?;
        let rec = shift(&trajectory[i], &cache.weights, &cfg.candidates, cfg.eta);
        trajectory.push(rec.out.clone());
        caches.push(cache);
        records.push(rec);
    }
    let loss = ds_loss(&trajectory[1..], &targets, &cfg.loss_weights)?;

    let eta = cfg.eta;
    let l = cfg.candidates.len();
    let mut g = vec![[0.0; 3]; m];
    for i in (0..cfg.iterations).rev() {
        let scale = cfg.loss_weights[i] / m as f64;
        for ((gx, x), t) in g.iter_mut().zip(&trajectory[i + 1]).zip(&targets) {
            for a in 0..3 {
                gx[a] += scale * sign(x[a] - t[a]);
            }
        }
        let rec = &records[i];
        let w = &caches[i].weights;
        let mut d_w = Matrix::zeros(m, l);
        for r in 0..m {
            for (j, out) in d_w.row_mut(r).iter_mut().enumerate() {
                let mean = &rec.means[j][r];
                *out = eta * (g[r][0] * mean[0] + g[r][1] * mean[1] + g[r][2] * mean[2]);
            }
        }
        head.backward(&caches[i], i, &d_w, &mut grad);
        if i == 0 {
            break;
        }
        if cfg.detach_iterations {
            g.iter_mut().for_each(|v| *v = [0.0; 3]);
            continue;
        }
        let mut prev: Vec<Vec3> = g.iter().map(|v| [(1.0 - eta) * v[0], (1.0 - eta) * v[1], (1.0 - eta) * v[2]]).collect();
        for (j, nb) in rec.neighborhoods.iter().enumerate() {
            for r in 0..m {
                let row = nb.row(r);
                let coef = eta * w.row(r)[j] / row.len() as f64;
                if coef == 0.0 {
                    continue;
                }
                let gr = g[r];
                for &y in row {
                    let p = &mut prev[y as usize];
                    p[0] += coef * gr[0];
                    p[1] += coef * gr[1];
                    p[2] += coef * gr[2];
                }
            }
        }
        g = prev;
    }
    Ok((loss, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Averages per-sample `(loss, gradient)` pairs in the given order.
pub fn mean_gradient(parts: &[(f64, Vec<f64>)]) -> (f64, Vec<f64>) {
    let n = parts.len().max(1) as f64;
    let len = parts.first().map_or(0, |p| p.1.len());
    let mut grad = vec![0.0; len];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|v| *v /= n);
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient descent with optional adaptive moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
                let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
                for i in 0..params.len() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                }
            }
        }
    }
}

/// Applies an already-averaged batch gradient after a finiteness check.
pub fn apply_gradient(
    head: &mut WeightHead,
    optimizer: &mut Optimizer,
    loss: f64,
    grad: &[f64],
    step: usize,
) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { loss, step });
    }
    optimizer.step(&mut head.params, grad);
    Ok(())
}

/// One optimization step on a batch; returns the batch-mean loss before the update.
pub fn ds_train_step(
    batch: &[TrainSample],
    cfg: &DsConfig,
    head: &mut WeightHead,
    optimizer: &mut Optimizer,
) -> Result<f64> {
    let parts = batch
        .iter()
        .map(|s| loss_and_gradient(s, cfg, head))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grad) = mean_gradient(&parts);
    apply_gradient(head, optimizer, loss, &grad, optimizer.t as usize)?;
    Ok(loss)
}

#[cfg(test)]
mod tests;
