use super::*;
use crate::cluster::flat_kernel_step;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: [f64; 3] = [0.2, 1.7, 3.2];

fn line(xs: &[f64]) -> Vec<Vec3> {
    xs.iter().map(|&x| [x, 0.0, 0.0]).collect()
}

fn one_hot(rows: usize, j: usize) -> Matrix {
    let mut w = Matrix::zeros(rows, 3);
    for r in 0..rows {
        w.row_mut(r)[j] = 1.0;
    }
    w
}

#[test]
fn one_hot_weights_reduce_to_flat_kernel() {
    let x = line(&[0.0, 0.15, 1.0, 2.5, 2.6]);
    for (j, &d) in L.iter().enumerate() {
        assert_eq!(ds_iteration(&x, &one_hot(5, j), &L, 1.0).unwrap(), flat_kernel_step(&x, d));
    }
}

#[test]
fn uniform_weights_average_two_kernels() {
    let x = line(&[0.0, 0.15, 1.0, 2.5, 2.6]);
    let mut w = Matrix::zeros(5, 3);
    for r in 0..5 {
        w.row_mut(r)[0] = 0.5;
        w.row_mut(r)[2] = 0.5;
    }
    let got = ds_iteration(&x, &w, &L, 1.0).unwrap();
    let a = flat_kernel_step(&x, 0.2);
    let b = flat_kernel_step(&x, 3.2);
    for r in 0..5 {
        for k in 0..3 {
            assert!((got[r][k] - 0.5 * (a[r][k] + b[r][k])).abs() < 1e-15);
        }
    }
}

#[test]
fn single_seed_never_moves() {
    let x = vec![[3.0, -1.0, 0.5]];
    let w = Matrix::from_vec(1, 3, vec![0.25, 0.5, 0.25]).unwrap();
    assert_eq!(ds_iteration(&x, &w, &L, 1.0).unwrap(), x);
    assert_eq!(ds_iteration(&x, &w, &L, 0.5).unwrap(), x);
}

#[test]
fn eta_interpolates() {
    let x = line(&[0.0, 1.0]);
    let w = one_hot(2, 2);
    let full = ds_iteration(&x, &w, &L, 1.0).unwrap();
    let half = ds_iteration(&x, &w, &L, 0.5).unwrap();
    assert_eq!(full, line(&[0.5, 0.5]));
    assert_eq!(half, line(&[0.25, 0.75]));
    assert!(ds_iteration(&x, &one_hot(3, 0), &L, 1.0).is_err());
}

proptest! {
    #[test]
    fn one_hot_equivalence_random(seed in any::<u64>(), n in 1usize..60, j in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec3> = (0..n).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-1.0..1.0)]).collect();
        let got = ds_iteration(&x, &one_hot(n, j), &L, 1.0).unwrap();
        let want = flat_kernel_step(&x, L[j]);
        for (a, b) in got.iter().zip(&want) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_translation_invariant(seed in any::<u64>(), t in (-50.0f64..50.0, -50.0f64..50.0, -5.0f64..5.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj: Vec<Vec<Vec3>> = (0..3).map(|_| (0..7).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0]).collect()).collect();
        let targets: Vec<Vec3> = (0..7).map(|_| [rng.random_range(-2.0..2.0), 1.0, 0.0]).collect();
        let shift = |v: &Vec3| [v[0] + t.0, v[1] + t.1, v[2] + t.2];
        let moved: Vec<Vec<Vec3>> = traj.iter().map(|x| x.iter().map(shift).collect()).collect();
        let moved_t: Vec<Vec3> = targets.iter().map(shift).collect();
        let a = ds_loss(&traj, &targets, &[1.0; 3]).unwrap();
        let b = ds_loss(&moved, &moved_t, &[1.0; 3]).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn loss_examples() {
    let c = vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
    assert_eq!(ds_loss(&[c.clone(), c.clone()], &c, &[1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(ds_loss(&[vec![[1.0, 1.0, 1.0]]], &[[0.0; 3]], &[1.0]).unwrap(), 3.0);
    let off = vec![[1.0, 0.0, 0.0]];
    assert_eq!(ds_loss(&[off.clone(), off], &[[0.0; 3]], &[1.0, 1.0]).unwrap(), 2.0);
    assert!(ds_loss(&[c.clone()], &c, &[1.0, 1.0]).is_err());
    assert!(ds_loss(&[c.clone()], &c[..1], &[1.0]).is_err());
}

#[test]
fn effective_bandwidth_examples() {
    let w = Matrix::from_vec(3, 3, vec![1.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 1.0]).unwrap();
    let bw = effective_bandwidth(&w, &L);
    assert_eq!(bw[0], 0.2);
    assert!((bw[1] - 1.7).abs() < 1e-15);
    assert_eq!(bw[2], 3.2);
}

#[test]
fn offset_target_examples() {
    let pts = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let off = center_offset_target(&pts, &[1, 1, 1]).unwrap();
    assert_eq!(off, vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    let moved: Vec<Vec3> = pts.iter().map(|p| [p[0] + 7.0, p[1] - 3.0, p[2] + 1.0]).collect();
    assert_eq!(center_offset_target(&moved, &[1, 1, 1]).unwrap(), off);
    assert!(matches!(
        center_offset_target(&pts, &[1, 0, 1]),
        Err(Error::MissingInstance { index: 1 })
    ));
}

/// Two well separated groups of very different size: a compact one and a
/// 3 m strip. Features encode the group so a head can tell them apart.
fn two_group_sample(seed: u64) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut centers = Vec::new();
    let mut targets = Vec::new();
    let mut feats = Vec::new();
    for _ in 0..30 {
        let p = [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), 0.0];
        points.push(p);
        centers.push([rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0]);
        targets.push([0.0; 3]);
        feats.extend_from_slice(&[0.0, rng.random_range(0.0..0.1), 1.0]);
    }
    for _ in 0..60 {
        let p = [20.0 + rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0), 0.0];
        points.push(p);
        centers.push([20.0 + rng.random_range(-1.5..1.5), rng.random_range(-0.1..0.1), 0.0]);
        targets.push([20.0, 0.0, 0.0]);
        feats.extend_from_slice(&[1.0, rng.random_range(0.0..0.1), 1.0]);
    }
    let n = points.len();
    TrainSample {
        points,
        features: Matrix::from_vec(n, 3, feats).unwrap(),
        centers,
        targets,
    }
}

fn test_dims(hidden: usize) -> HeadDims {
    HeadDims {
        feature_dim: 3,
        hidden,
        candidates: 3,
        iterations: 4,
    }
}

#[test]
fn zero_iterations_equals_final_cluster_on_centers() {
    let s = two_group_sample(1);
    let cfg = DsConfig::default().with_iterations(0);
    let head = WeightHead::zeros(test_dims(0), &L);
    let out = ds_forward(&s.points, &s.features, &s.centers, &cfg, &head).unwrap();
    assert_eq!(out.clusters, cfg.final_cluster.run(&s.centers));
    assert_eq!(out.trajectory.len(), 1);
}

#[test]
fn forward_separates_groups_and_covers_points() {
    let s = two_group_sample(2);
    let head = WeightHead::zeros(test_dims(0), &L);
    let cfg = DsConfig::default();
    let out = ds_forward(&s.points, &s.features, &s.centers, &cfg, &head).unwrap();
    assert_eq!(out.seeds, (0..90).collect::<Vec<_>>());
    assert_eq!(out.clusters.ids.len(), 90);
    assert_eq!(out.clusters.num_clusters(), 2);
    assert!(out.clusters.ids[..30].iter().all(|&i| i == out.clusters.ids[0]));
    assert!(out.clusters.ids[30..].iter().all(|&i| i == out.clusters.ids[30]));
    assert_ne!(out.clusters.ids[0], out.clusters.ids[30]);

    let mut sub = cfg.clone();
    sub.fps_count = 20;
    let out = ds_forward(&s.points, &s.features, &s.centers, &sub, &head).unwrap();
    assert_eq!(out.seeds.len(), 20);
    assert!(out.clusters.ids.iter().all(|&i| i > 0));

    let empty = ds_forward(&[], &Matrix::zeros(0, 3), &[], &cfg, &head).unwrap();
    assert!(empty.clusters.ids.is_empty());
}

#[test]
fn forward_rejects_mismatches() {
    let s = two_group_sample(3);
    let head = WeightHead::zeros(test_dims(0), &L);
    let cfg = DsConfig::default();
    assert!(ds_forward(&s.points, &s.features, &s.centers[1..], &cfg, &head).is_err());
    let short = WeightHead::zeros(
        HeadDims {
            iterations: 2,
            ..test_dims(0)
        },
        &L,
    );
    assert!(ds_forward(&s.points, &s.features, &s.centers, &cfg, &short).is_err());
    let bad_cfg = DsConfig {
        candidates: vec![0.2, -1.0, 3.0],
        ..DsConfig::default()
    };
    assert!(ds_forward(&s.points, &s.features, &s.centers, &bad_cfg, &head).is_err());
}

/// Forward-only loss via the public operations, plus the masks it used.
fn reference_loss(s: &TrainSample, cfg: &DsConfig, head: &WeightHead) -> (f64, Vec<Neighborhoods>) {
    let seeds = geom::farthest_point_sampling(&s.points, cfg.fps_count, FpsStart::Lowest);
    let feats = s.features.select_rows(&seeds);
    let targets: Vec<Vec3> = seeds.iter().map(|&i| s.targets[i]).collect();
    let mut x: Vec<Vec3> = seeds.iter().map(|&i| s.centers[i]).collect();
    let mut traj = Vec::new();
    let mut masks = Vec::new();
    for i in 0..cfg.iterations {
        for &d in &cfg.candidates {
            masks.push(Neighborhoods::build(&x, d));
        }
        let w = weight_head_forward(&feats, i, head).unwrap();
        x = ds_iteration(&x, &w, &cfg.candidates, cfg.eta).unwrap();
        traj.push(x.clone());
    }
    (ds_loss(&traj, &targets, &cfg.loss_weights).unwrap(), masks)
}

/// Smallest gap between any pairwise seed distance and any candidate
/// bandwidth over the whole forward pass.
fn boundary_margin(s: &TrainSample, cfg: &DsConfig, head: &WeightHead) -> f64 {
    let out = ds_forward(&s.points, &s.features, &s.centers, cfg, head).unwrap();
    let mut margin = f64::INFINITY;
    for x in &out.trajectory[..cfg.iterations] {
        for a in 0..x.len() {
            for b in a + 1..x.len() {
                let d = geom::dist(&x[a], &x[b]);
                for &c in &cfg.candidates {
                    margin = margin.min((d - c).abs());
                }
            }
        }
    }
    margin
}

fn random_head(dims: HeadDims, rng: &mut ChaCha8Rng) -> WeightHead {
    let mut head = WeightHead::random(dims, &L, rng.random());
    for p in &mut head.params {
        *p += rng.random_range(-1.0..1.0);
    }
    head
}

fn small_sample(rng: &mut ChaCha8Rng) -> TrainSample {
    let mut points = Vec::new();
    let mut centers = Vec::new();
    let mut targets = Vec::new();
    let mut feats = Vec::new();
    for (g, (cx, spread)) in [(0.0, 0.3), (6.0, 1.2), (14.0, 2.5)].into_iter().enumerate() {
        for _ in 0..12 {
            points.push([cx + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0]);
            centers.push([cx + rng.random_range(-spread..spread), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)]);
            targets.push([cx, 0.0, 0.0]);
            feats.extend_from_slice(&[g as f64, rng.random_range(-1.0..1.0), spread]);
        }
    }
    let n = points.len();
    TrainSample {
        points,
        features: Matrix::from_vec(n, 3, feats).unwrap(),
        centers,
        targets,
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = DsConfig::default();
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 6 {
        attempts += 1;
        assert!(attempts < 200, "could not find parameter points away from mask boundaries");
        let hidden = if checked % 2 == 0 { 0 } else { 5 };
        let s = small_sample(&mut rng);
        let head = random_head(test_dims(hidden), &mut rng);
        if boundary_margin(&s, &cfg, &head) < 1e-3 {
            continue;
        }
        let (loss, grad) = loss_and_gradient(&s, &cfg, &head).unwrap();
        let (ref_loss, base_masks) = reference_loss(&s, &cfg, &head);
        assert!((loss - ref_loss).abs() < 1e-12);
        let h = 1e-6;
        let mut fd = vec![0.0; grad.len()];
        for k in 0..grad.len() {
            let mut plus = head.clone();
            plus.params[k] += h;
            let mut minus = head.clone();
            minus.params[k] -= h;
            let (lp, mp) = reference_loss(&s, &cfg, &plus);
            let (lm, mm) = reference_loss(&s, &cfg, &minus);
            assert_eq!(mp, base_masks);
            assert_eq!(mm, base_masks);
            fd[k] = (lp - lm) / (2.0 * h);
        }
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(den > 1e-8, "degenerate gradient");
        assert!(num / den < 1e-4, "relative gradient error {}", num / den);
        checked += 1;
    }
}

#[test]
fn detached_gradient_matches_frozen_inputs() {
    // With detach on, only the direct dependence through W_i counts.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = DsConfig {
        detach_iterations: true,
        ..DsConfig::default()
    };
    let s = small_sample(&mut rng);
    let head = random_head(test_dims(0), &mut rng);
    let (_, grad) = loss_and_gradient(&s, &cfg, &head).unwrap();
    let full = loss_and_gradient(&s, &DsConfig::default(), &head).unwrap().1;
    // the last iteration has no downstream terms, so both agree there
    let per = head.dims.params_per_iteration();
    assert_eq!(grad[3 * per..], full[3 * per..]);
    assert_ne!(grad[..per], full[..per]);
}

#[test]
fn training_reduces_loss_and_learns_size_dependent_bandwidth() {
    let samples: Vec<TrainSample> = (0..4).map(two_group_sample).collect();
    let cfg = DsConfig::default();
    let mut head = WeightHead::random(test_dims(0), &L, 5);
    let mut opt = Optimizer::adam(0.02);
    let first = ds_train_step(&samples, &cfg, &mut head, &mut opt).unwrap();
    let mut last = first;
    for _ in 0..200 {
        last = ds_train_step(&samples, &cfg, &mut head, &mut opt).unwrap();
    }
    assert!(last < first, "loss {first} -> {last}");
    let s = &samples[0];
    let out = ds_forward(&s.points, &s.features, &s.centers, &cfg, &head).unwrap();
    let bw = effective_bandwidth(&out.weights[0], &L);
    let small: f64 = bw[..30].iter().sum::<f64>() / 30.0;
    let large: f64 = bw[30..].iter().sum::<f64>() / 60.0;
    assert!(large > small, "small {small} large {large}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let samples = vec![two_group_sample(9)];
    let cfg = DsConfig::default();
    let mut head = WeightHead::random(test_dims(4), &L, 1);
    let before = head.clone();
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let mut opt = Optimizer::new(kind, 0.0);
        ds_train_step(&samples, &cfg, &mut head, &mut opt).unwrap();
        assert_eq!(head, before);
    }
}

#[test]
fn non_finite_loss_aborts_without_update() {
    let mut s = two_group_sample(4);
    s.targets[0] = [f64::NAN, 0.0, 0.0];
    let cfg = DsConfig::default();
    let mut head = WeightHead::zeros(test_dims(0), &L);
    let before = head.clone();
    let err = ds_train_step(&[s], &cfg, &mut head, &mut Optimizer::adam(0.002)).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }));
    assert_eq!(head, before);
}
