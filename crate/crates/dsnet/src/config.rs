//! Experiment configuration: one TOML file, every field optional.
//!
//! ```toml
//! seed = 7
//! scenes = 20
//! [cluster]
//! algorithm = "meanshift"
//! bandwidth = 1.2
//! [dshift]
//! candidates = [0.2, 1.7, 3.2]
//! [train]
//! epochs = 50
//! ```

use std::path::{Path, PathBuf};

use dsnet_core::cluster::{Heuristic, MeanShiftParams};
use dsnet_core::dshift::DsConfig;
use dsnet_core::fusion::FusionPolicy;
use dsnet_core::pipeline::Algorithm;
use dsnet_core::synth::SceneSpec;
use dsnet_core::ClassConfig;
use serde::{Deserialize, Serialize};

use crate::bench::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    #[default]
    Dshift,
    Meanshift,
    Bfs,
    Dbscan,
}

impl std::str::FromStr for AlgorithmName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dshift" => Ok(Self::Dshift),
            "meanshift" => Ok(Self::Meanshift),
            "bfs" => Ok(Self::Bfs),
            "dbscan" => Ok(Self::Dbscan),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (expected dshift, meanshift, bfs or dbscan)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub algorithm: AlgorithmName,
    /// Mean-shift bandwidth.
    pub bandwidth: f64,
    /// Mean-shift sweep used by `bench-cluster`.
    pub sweep: Vec<f64>,
    /// BFS radius and DBSCAN eps.
    pub radius: f64,
    pub min_pts: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            algorithm: AlgorithmName::Dshift,
            bandwidth: 1.2,
            sweep: crate::bench::BASELINE_BANDWIDTHS.to_vec(),
            radius: 0.3,
            min_pts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: usize,
    /// Training scenes use seeds `first_seed..first_seed + scenes`.
    pub scenes: usize,
    pub first_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            hidden: t.hidden,
            scenes: 16,
            first_seed: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Synthetic scenes, or sequences when `frames > 1`.
    pub scenes: usize,
    pub frames: usize,
    /// Frames per 4D window; 1 segments frames independently.
    pub window: usize,
    /// Scene family; absent means the mixed-size preset.
    pub scene: Option<SceneSpec>,
    pub classes: Option<ClassConfig>,
    /// Absent means the default policy with the class registry's size floor.
    pub fusion: Option<FusionPolicy>,
    pub cluster: ClusterSection,
    pub dshift: DsConfig,
    pub train: TrainSection,
    /// Trained weight head for `dshift`.
    pub head: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 100,
            frames: 1,
            window: 1,
            scene: None,
            classes: None,
            fusion: None,
            cluster: ClusterSection::default(),
            dshift: DsConfig::default(),
            train: TrainSection::default(),
            head: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.frames == 0 {
            return Err(Error::Config("window and frames must be positive".into()));
        }
        if let Some(s) = &self.scene {
            s.validate()?;
        }
        self.class_config().validate()?;
        self.dshift.validate()?;
        let c = &self.cluster;
        if !(c.bandwidth > 0.0 && c.radius > 0.0) || c.sweep.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Config("bandwidths and radii must be positive".into()));
        }
        if !(self.train.lr >= 0.0) || self.train.batch == 0 {
            return Err(Error::Config("lr must be non-negative and batch positive".into()));
        }
        Ok(())
    }

    /// Scene spec for one seed.
    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        match &self.scene {
            Some(s) => SceneSpec { seed, ..s.clone() },
            None => SceneSpec::mixed_size(seed),
        }
    }

    pub fn class_config(&self) -> ClassConfig {
        self.classes.clone().unwrap_or_else(ClassConfig::synthetic)
    }

    pub fn fusion_policy(&self) -> FusionPolicy {
        self.fusion.unwrap_or_else(|| FusionPolicy::for_classes(&self.class_config()))
    }

    pub fn algorithm(&self) -> Algorithm {
        let c = &self.cluster;
        match c.algorithm {
            AlgorithmName::Dshift => Algorithm::DynamicShift(self.dshift.clone()),
            AlgorithmName::Meanshift => {
                Algorithm::Heuristic(Heuristic::MeanShift(MeanShiftParams::with_bandwidth(c.bandwidth)))
            }
            AlgorithmName::Bfs => Algorithm::Heuristic(Heuristic::Bfs {
                radius: c.radius,
                min_pts: c.min_pts,
            }),
            AlgorithmName::Dbscan => Algorithm::Heuristic(Heuristic::Dbscan {
                eps: c.radius,
                min_pts: c.min_pts,
            }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch: self.train.batch,
            lr: self.train.lr,
            hidden: self.train.hidden,
            seed: self.seed,
        }
    }
}
