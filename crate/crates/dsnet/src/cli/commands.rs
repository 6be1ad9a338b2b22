use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dsnet::bench::{self, BenchScene, TrainConfig};
use dsnet::config::{AlgorithmName, Config};
use dsnet::dataset::{load_eval_pairs, load_sequence, segment_sequence, write_synthetic_sequence};
use dsnet::io::{self, SequenceDir};
use dsnet_core::dshift::{TrainSample, WeightHead};
use dsnet_core::metrics::{LstqAccumulator, MetricReport, PqAccumulator};
use dsnet_core::pipeline::Algorithm;
use dsnet_core::synth::generate_sequence;
use dsnet_core::ClassKind;

fn require_out(out: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    out.with_context(|| format!("--out is required ({what})"))
}

fn load_head(cfg: &Config) -> Result<Option<WeightHead>> {
    let Some(path) = &cfg.head else {
        return Ok(None);
    };
    let bytes = io::read_bytes(path)?;
    let head = WeightHead::from_bytes(&bytes).with_context(|| format!("reading head {}", path.display()))?;
    if head.bandwidths != cfg.dshift.candidates || head.dims.iterations != cfg.dshift.iterations {
        bail!(
            "head {} was trained for candidates {:?} and {} iterations, config has {:?} and {}",
            path.display(),
            head.bandwidths,
            head.dims.iterations,
            cfg.dshift.candidates,
            cfg.dshift.iterations
        );
    }
    Ok(Some(head))
}

pub fn synth_gen(cfg: &Config, out: Option<PathBuf>, scenes: Option<usize>, frames: Option<usize>) -> Result<()> {
    let out = require_out(out, "dataset root")?;
    let sequences = scenes.unwrap_or(cfg.scenes);
    let frames = frames.unwrap_or(cfg.frames).max(1);
    for s in 0..sequences {
        let seed = cfg.seed + s as u64;
        let spec = cfg.scene_spec(seed);
        let scenes = generate_sequence(&spec, frames)?;
        write_synthetic_sequence(&SequenceDir::new(&out, s as u32), &scenes, &spec.noise, seed)?;
    }
    println!("wrote {sequences} sequence(s) of {frames} frame(s) to {}", out.display());
    Ok(())
}

pub fn segment(cfg: &Config, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let out = require_out(out, "prediction root")?;
    let input = match input {
        Some(p) => p,
        None => {
            synth_gen(cfg, Some(out.clone()), None, None)?;
            out.clone()
        }
    };
    let classes = cfg.class_config();
    let algorithm = cfg.algorithm();
    let head = load_head(cfg)?;
    if matches!(algorithm, Algorithm::DynamicShift(_)) && head.is_none() {
        bail!("algorithm dshift needs a trained head (--head or `head` in the config)");
    }
    let policy = cfg.fusion_policy();
    let sequences = io::list_sequences(&input)?;
    if sequences.is_empty() {
        bail!("no sequences under {}", input.join("sequences").display());
    }
    let mut frames = 0;
    for s in sequences {
        let seq = load_sequence(&input, s).with_context(|| format!("loading sequence {s:02}"))?;
        let preds = segment_sequence(&seq, &classes, &algorithm, head.as_ref(), &policy, cfg.window)?;
        let dir = SequenceDir::new(&out, s);
        for (&t, p) in seq.frame_ids.iter().zip(&preds) {
            io::write_labels(&dir.predictions(t), p)?;
        }
        frames += preds.len();
    }
    println!("{}: wrote {frames} prediction file(s) under {}", algorithm.name(), out.display());
    Ok(())
}

fn report_path(out: Option<PathBuf>, pred: &Path, name: &str) -> PathBuf {
    out.unwrap_or_else(|| pred.join(name))
}

fn format_table(r: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>6} {:>7} {:>7} {:>7} {:>7}", "class", "kind", "PQ", "SQ", "RQ", "IoU");
    for c in &r.per_class {
        let kind = if c.kind == ClassKind::Things { "things" } else { "stuff" };
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            c.name,
            kind,
            100.0 * c.pq,
            100.0 * c.sq,
            100.0 * c.rq,
            100.0 * c.iou
        );
    }
    for (k, v) in r.fields() {
        let _ = writeln!(s, "{k:<14} {:>7.2}", 100.0 * v);
    }
    s
}

pub fn eval(cfg: &Config, gt: &Path, pred: &Path, out: Option<PathBuf>) -> Result<()> {
    let classes = cfg.class_config();
    let mut acc = PqAccumulator::new(&classes);
    for (_, g, p) in load_eval_pairs(gt, pred)? {
        for (p, g) in p.iter().zip(&g) {
            acc.add_frame(p, g)?;
        }
    }
    let r = acc.report();
    print!("{}", format_table(&r));
    let mut fields: Vec<(String, f64)> = r.fields().iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for c in &r.per_class {
        fields.push((format!("pq.{}", c.name), c.pq));
        fields.push((format!("iou.{}", c.name), c.iou));
    }
    let path = report_path(out, pred, "eval.txt");
    io::write_atomic(&path, io::format_key_values(fields.iter().map(|(k, v)| (k.as_str(), *v))).as_bytes())?;
    println!("report: {}", path.display());
    Ok(())
}

pub fn eval4d(cfg: &Config, gt: &Path, pred: &Path, out: Option<PathBuf>) -> Result<()> {
    let classes = cfg.class_config();
    let mut acc = LstqAccumulator::new(&classes);
    for (s, g, p) in load_eval_pairs(gt, pred)? {
        acc.start_sequence(s);
        for (p, g) in p.iter().zip(&g) {
            acc.add_frame(p, g)?;
        }
    }
    let r = acc.report()?;
    let mut fields: Vec<(String, f64)> = r.fields().iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for &(c, iou) in &r.per_class_iou {
        fields.push((format!("iou.{}", classes.name(c).unwrap_or("?")), iou));
    }
    for (k, v) in &fields {
        println!("{k:<16} {:>7.2}", 100.0 * v);
    }
    let path = report_path(out, pred, "eval4d.txt");
    io::write_atomic(&path, io::format_key_values(fields.iter().map(|(k, v)| (k.as_str(), *v))).as_bytes())?;
    println!("report: {}", path.display());
    Ok(())
}

fn training_samples(cfg: &Config, count: usize) -> Result<Vec<TrainSample>> {
    let scenes = bench::generate_benchmark(|s| cfg.scene_spec(s), cfg.train.first_seed, count)?;
    Ok(scenes.iter().map(BenchScene::train_sample).collect())
}

fn train(cfg: &Config, tc: &TrainConfig, scenes: usize) -> Result<bench::Training> {
    let samples = training_samples(cfg, scenes)?;
    Ok(bench::train_head(&samples, &cfg.dshift, tc)?)
}

pub fn train_ds(
    cfg: &Config,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    scenes: Option<usize>,
) -> Result<()> {
    let out = require_out(out, "checkpoint directory")?;
    let mut tc = cfg.train_config();
    tc.epochs = epochs.unwrap_or(tc.epochs);
    tc.lr = lr.unwrap_or(tc.lr);
    if !(tc.lr >= 0.0) {
        bail!("lr must be non-negative");
    }
    let t = train(cfg, &tc, scenes.unwrap_or(cfg.train.scenes))?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in t.epoch_loss.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.6}", e + 1);
        let _ = writeln!(curve, "{},{l}", e + 1);
    }
    io::write_atomic(&out.join("head.dsw"), &t.head.to_bytes())?;
    io::write_atomic(&out.join("loss.csv"), curve.as_bytes())?;
    if let Some(e) = t.diverged {
        bail!("training diverged ({e}); last finite head saved to {}", out.join("head.dsw").display());
    }
    println!("head: {}", out.join("head.dsw").display());
    Ok(())
}

pub fn bench_cluster(cfg: &Config, out: Option<PathBuf>, scenes: Option<usize>) -> Result<()> {
    let out = require_out(out, "CSV file")?;
    let classes = cfg.class_config();
    let policy = cfg.fusion_policy();
    let eval = bench::generate_benchmark(|s| cfg.scene_spec(s), cfg.seed, scenes.unwrap_or(cfg.scenes))?;
    let mut grid: Vec<(String, Algorithm)> = cfg
        .cluster
        .sweep
        .iter()
        .map(|&b| (format!("bandwidth={b}"), Algorithm::mean_shift(b)))
        .collect();
    for name in [AlgorithmName::Bfs, AlgorithmName::Dbscan] {
        let mut c = cfg.clone();
        c.cluster.algorithm = name;
        let params = format!("radius={} min_pts={}", c.cluster.radius, c.cluster.min_pts);
        grid.push((params, c.algorithm()));
    }
    let head = match load_head(cfg)? {
        Some(h) => h,
        None => {
            eprintln!("no head given; training one on {} scenes", cfg.train.scenes);
            let t = train(cfg, &cfg.train_config(), cfg.train.scenes)?;
            if let Some(e) = t.diverged {
                bail!("training diverged: {e}");
            }
            t.head
        }
    };
    let candidates: Vec<String> = cfg.dshift.candidates.iter().map(f64::to_string).collect();
    grid.push((
        format!("candidates={}", candidates.join("/")),
        Algorithm::DynamicShift(cfg.dshift.clone()),
    ));
    let things: Vec<_> = classes.classes.iter().filter(|c| c.kind == ClassKind::Things).collect();
    let mut csv = String::from("algorithm,params,pq,pq_th,pq_st,miou");
    for c in &things {
        let _ = write!(csv, ",pq_{}", c.name);
    }
    csv.push_str(",runtime_ms\n");
    for (params, algo) in &grid {
        let start = Instant::now();
        let r = bench::evaluate(&eval, &classes, algo, Some(&head), &policy)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let _ = write!(csv, "{},{params},{},{},{},{}", algo.name(), r.pq, r.pq_th, r.pq_st, r.miou);
        for c in &things {
            let _ = write!(csv, ",{}", r.class(c.id).map_or(0.0, |m| m.pq));
        }
        let _ = writeln!(csv, ",{ms:.1}");
        println!("{:<10} {:<28} PQ {:>6.2}  PQ_Th {:>6.2}", algo.name(), params, 100.0 * r.pq, 100.0 * r.pq_th);
    }
    io::write_atomic(&out, csv.as_bytes())?;
    println!("csv: {}", out.display());
    Ok(())
}
