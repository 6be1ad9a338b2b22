//! `dsnet` subcommands. Every command is deterministic given its seeds and
//! exits non-zero unless all of its outputs were written.

mod commands;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dsnet::config::{AlgorithmName, Config};

#[derive(Debug, Parser)]
#[command(name = "dsnet", version, about = "Dynamic-shifting LiDAR panoptic segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// dshift, meanshift, bfs or dbscan.
    #[arg(long, global = true)]
    pub algorithm: Option<AlgorithmName>,
    /// Mean-shift bandwidth.
    #[arg(long, global = true)]
    pub bandwidth: Option<f64>,
    /// Dynamic-shifting bandwidth candidates, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub bandwidths: Option<Vec<f64>>,
    /// Dynamic-shifting iterations.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Smallest instance kept by fusion.
    #[arg(long, global = true)]
    pub min_points: Option<usize>,
    /// Frames per 4D window.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Trained weight head.
    #[arg(long, global = true)]
    pub head: Option<PathBuf>,
    /// Output directory or file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sequences in the SemanticKITTI layout.
    SynthGen {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Cluster and fuse every frame of a dataset; writes prediction labels.
    Segment {
        /// Dataset root; without it a synthetic dataset is generated into --out first.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Panoptic quality of predictions against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// LSTQ of predictions against ground truth.
    Eval4d {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Train a dynamic-shifting weight head on synthetic scenes.
    TrainDs {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Training scenes.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Compare clustering algorithms on synthetic scenes; writes CSV.
    BenchCluster {
        #[arg(long)]
        scenes: Option<usize>,
    },
}

/// Config file, then flags.
pub fn resolve_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(a) = common.algorithm {
        cfg.cluster.algorithm = a;
    }
    if let Some(b) = common.bandwidth {
        cfg.cluster.bandwidth = b;
    }
    if let Some(b) = &common.bandwidths {
        cfg.dshift.candidates = b.clone();
    }
    if let Some(i) = common.iterations {
        cfg.dshift = cfg.dshift.clone().with_iterations(i);
    }
    if let Some(m) = common.min_points {
        let mut policy = cfg.fusion_policy();
        policy.min_instance_points = m;
        cfg.fusion = Some(policy);
    }
    if let Some(w) = common.window {
        cfg.window = w;
    }
    if let Some(h) = &common.head {
        cfg.head = Some(h.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = cli.common.out.clone();
    match cli.command {
        Command::SynthGen { scenes, frames } => commands::synth_gen(&cfg, out, scenes, frames),
        Command::Segment { input } => commands::segment(&cfg, input, out),
        Command::Eval { gt, pred } => commands::eval(&cfg, &gt, &pred, out),
        Command::Eval4d { gt, pred } => commands::eval4d(&cfg, &gt, &pred, out),
        Command::TrainDs { epochs, lr, scenes } => commands::train_ds(&cfg, out, epochs, lr, scenes),
        Command::BenchCluster { scenes } => commands::bench_cluster(&cfg, out, scenes),
    }
}
