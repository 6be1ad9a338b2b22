use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsnet::io::{self, SequenceDir};
use dsnet_core::PanopticLabeling;

fn dsnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsnet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dsnet(args);
    assert!(
        out.status.success(),
        "dsnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(path: &Path) -> Vec<(String, f64)> {
    io::parse_key_values(path, &std::fs::read_to_string(path).unwrap()).unwrap()
}

fn field(path: &Path, key: &str) -> f64 {
    report(path).into_iter().find(|(k, _)| k == key).unwrap().1
}

/// Copies ground-truth labels into the prediction layout, optionally edited.
fn labels_as_predictions(gt: &Path, pred: &Path, edit: impl Fn(u32, usize, &mut PanopticLabeling)) {
    for seq in io::list_sequences(gt).unwrap() {
        let g = SequenceDir::new(gt, seq);
        let p = SequenceDir::new(pred, seq);
        for t in g.frames_in("labels", "label").unwrap() {
            let mut l = io::read_labels(&g.labels(t), None).unwrap();
            edit(seq, t, &mut l);
            io::write_labels(&p.predictions(t), &l).unwrap();
        }
    }
}

fn synth(dir: &Path, scenes: &str, frames: &str) -> PathBuf {
    let root = dir.join("ds");
    ok(&["synth-gen", "--out", s(&root), "--scenes", scenes, "--frames", frames, "--seed", "5"]);
    root
}

#[test]
fn synth_gen_writes_the_dataset_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "2", "3");
    let seq = SequenceDir::new(&root, 1);
    assert_eq!(seq.frames_in("velodyne", "bin").unwrap(), vec![0, 1, 2]);
    assert_eq!(seq.frames_in("labels", "label").unwrap(), vec![0, 1, 2]);
    let poses = io::read_poses(&seq.poses(), &seq.calib()).unwrap();
    assert_eq!(poses.len(), 3);
    let n = io::read_points(&seq.scan(0)).unwrap().len();
    assert_eq!(io::read_centers(&seq.centers(0), n).unwrap().len(), n);
    assert_eq!(io::read_features(&seq.features(0), n).unwrap().cols, 8);
}

#[test]
fn segment_then_eval_meanshift_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "2", "1");
    let pred = tmp.path().join("pred");
    let out = ok(&["segment", "--input", s(&root), "--out", s(&pred), "--algorithm", "meanshift", "--bandwidth", "1.2"]);
    assert!(out.starts_with("meanshift:"), "{out}");
    let rep = tmp.path().join("eval.txt");
    let table = ok(&["eval", "--gt", s(&root), "--pred", s(&pred), "--out", s(&rep)]);
    assert!(table.contains("pq_th"));
    let pq = field(&rep, "pq");
    assert!(pq > 0.0 && pq <= 1.0);
    // semantics come from the labels, so class IoU is perfect
    assert_eq!(field(&rep, "miou"), 1.0);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "2", "2");
    let pred = tmp.path().join("pred");
    labels_as_predictions(&root, &pred, |_, _, _| {});
    ok(&["eval", "--gt", s(&root), "--pred", s(&pred)]);
    assert_eq!(field(&pred.join("eval.txt"), "pq"), 1.0);
    ok(&["eval4d", "--gt", s(&root), "--pred", s(&pred)]);
    assert_eq!(field(&pred.join("eval4d.txt"), "lstq"), 1.0);
}

#[test]
fn eval_hand_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (gt, pred) = (tmp.path().join("gt"), tmp.path().join("pred"));
    let g = SequenceDir::new(&gt, 0);
    // car instance on five points, prediction covers three of them plus a spurious instance
    io::write_labels(&g.labels(0), &PanopticLabeling::new(vec![2; 7], vec![1, 1, 1, 1, 1, 0, 0]).unwrap()).unwrap();
    let p = SequenceDir::new(&pred, 0);
    io::write_labels(&p.predictions(0), &PanopticLabeling::new(vec![2; 7], vec![1, 1, 1, 0, 0, 2, 2]).unwrap()).unwrap();
    ok(&["eval", "--gt", s(&gt), "--pred", s(&pred)]);
    let rep = pred.join("eval.txt");
    assert!((field(&rep, "pq") - 0.4).abs() < 1e-12);
    assert!((field(&rep, "sq") - 0.6).abs() < 1e-12);
}

#[test]
fn corrupted_ids_lower_lstq() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "1", "4");
    let (clean, bad) = (tmp.path().join("clean"), tmp.path().join("bad"));
    labels_as_predictions(&root, &clean, |_, _, _| {});
    labels_as_predictions(&root, &bad, |_, t, l| {
        if t >= 2 {
            for id in l.instance.iter_mut().filter(|id| **id > 0) {
                *id += 100;
            }
        }
    });
    ok(&["eval4d", "--gt", s(&root), "--pred", s(&clean)]);
    ok(&["eval4d", "--gt", s(&root), "--pred", s(&bad)]);
    assert!(field(&bad.join("eval4d.txt"), "lstq") < field(&clean.join("eval4d.txt"), "lstq"));
}

#[test]
fn frame_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "1", "3");
    let pred = tmp.path().join("pred");
    labels_as_predictions(&root, &pred, |_, _, _| {});
    std::fs::remove_file(SequenceDir::new(&pred, 0).predictions(1)).unwrap();
    let out = dsnet(&["eval", "--gt", s(&root), "--pred", s(&pred)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("00/000001"), "{err}");
    assert!(!pred.join("eval.txt").exists());
}

#[test]
fn empty_scene_gives_empty_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("ds");
    let seq = SequenceDir::new(&root, 0);
    io::write_points(&seq.scan(0), &[]).unwrap();
    io::write_label_words(&seq.labels(0), &[]).unwrap();
    io::write_centers(&seq.centers(0), &[]).unwrap();
    let pred = tmp.path().join("pred");
    ok(&["segment", "--input", s(&root), "--out", s(&pred), "--algorithm", "bfs"]);
    assert_eq!(std::fs::read(SequenceDir::new(&pred, 0).predictions(0)).unwrap().len(), 0);
}

#[test]
fn four_d_segmentation_of_a_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "1", "4");
    let pred = tmp.path().join("pred");
    ok(&["segment", "--input", s(&root), "--out", s(&pred), "--algorithm", "meanshift", "--window", "2"]);
    ok(&["eval4d", "--gt", s(&root), "--pred", s(&pred)]);
    let l = field(&pred.join("eval4d.txt"), "lstq");
    assert!(l > 0.0 && l <= 1.0);
}

fn train_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("exp.toml");
    std::fs::write(&cfg, "seed = 1\n[train]\nscenes = 2\nhidden = 8\n").unwrap();
    cfg
}

#[test]
fn training_is_deterministic_and_feeds_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = train_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train-ds", "--config", s(&cfg), "--epochs", "3", "--out", s(&a)]);
    ok(&["train-ds", "--config", s(&cfg), "--epochs", "3", "--out", s(&b)]);
    assert_eq!(std::fs::read(a.join("head.dsw")).unwrap(), std::fs::read(b.join("head.dsw")).unwrap());
    let curve = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);

    let root = synth(tmp.path(), "1", "1");
    let pred = tmp.path().join("pred");
    let head = a.join("head.dsw");
    let out = ok(&["segment", "--input", s(&root), "--out", s(&pred), "--head", s(&head)]);
    assert!(out.starts_with("dshift:"), "{out}");
    ok(&["eval", "--gt", s(&root), "--pred", s(&pred)]);
    assert!(field(&pred.join("eval.txt"), "pq") > 0.0);

    // a head trained for other candidates is rejected
    let bad = dsnet(&["segment", "--input", s(&root), "--out", s(&pred), "--head", s(&head), "--bandwidths", "0.2,1.1,2.0"]);
    assert!(!bad.status.success());
}

#[test]
fn training_lowers_loss_and_zero_lr_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = train_config(tmp.path());
    let read = |dir: &Path| -> Vec<f64> {
        std::fs::read_to_string(dir.join("loss.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let t = tmp.path().join("t");
    ok(&["train-ds", "--config", s(&cfg), "--epochs", "8", "--out", s(&t)]);
    let l = read(&t);
    assert!(l.last().unwrap() < l.first().unwrap(), "{l:?}");
    let z = tmp.path().join("z");
    ok(&["train-ds", "--config", s(&cfg), "--epochs", "3", "--lr", "0", "--out", s(&z)]);
    let l = read(&z);
    assert!(l.iter().all(|v| *v == l[0]), "{l:?}");
}

#[test]
fn bench_cluster_writes_one_row_per_algorithm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    std::fs::write(&cfg, "scenes = 3\n[cluster]\nsweep = [0.65, 1.7]\n[train]\nscenes = 2\nepochs = 2\nhidden = 4\n").unwrap();
    let csv = tmp.path().join("bench.csv");
    ok(&["bench-cluster", "--config", s(&cfg), "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "algorithm,params,pq,pq_th,pq_st,miou,pq_person,pq_car,pq_truck,runtime_ms");
    let algos: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(algos, vec!["meanshift", "meanshift", "bfs", "dbscan", "dshift"]);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let root = synth(tmp.path(), "1", "1");
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[cluster]\nalgorithm = \"meanshift\"\n").unwrap();
    let pred = tmp.path().join("pred");
    let out = ok(&["segment", "--config", s(&cfg), "--input", s(&root), "--out", s(&pred)]);
    assert!(out.starts_with("meanshift:"));
    let out = ok(&["segment", "--config", s(&cfg), "--algorithm", "dbscan", "--input", s(&root), "--out", s(&pred)]);
    assert!(out.starts_with("dbscan:"));
}

#[test]
fn bad_inputs_fail_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!dsnet(&["segment", "--input", s(&tmp.path().join("missing")), "--out", s(tmp.path())]).status.success());
    assert!(!dsnet(&["segment", "--algorithm", "kmeans", "--out", s(tmp.path())]).status.success());
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "window = 0\n").unwrap();
    assert!(!dsnet(&["synth-gen", "--config", s(&cfg), "--out", s(tmp.path())]).status.success());
    // dshift without a head
    let root = synth(tmp.path(), "1", "1");
    assert!(!dsnet(&["segment", "--input", s(&root), "--out", s(&tmp.path().join("p"))]).status.success());
}
