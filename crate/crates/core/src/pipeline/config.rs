//! Whole-pipeline configuration, validated up front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::{OracleConfig, SoundSpeedProfile, SourceSpec, Summation};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::metrics::SsimConfig;
use crate::model::ModelConfig;
use crate::scenario::{DatasetConfig, RayOracle};
use crate::trainer::TrainSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub profile: SoundSpeedProfile,
    pub n_layers: usize,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            profile: SoundSpeedProfile::munk(),
            n_layers: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub probe_depths: Vec<f64>,
    pub ssim: SsimConfig,
    /// Fields timed when comparing inference with the oracle.
    pub timing_fields: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            probe_depths: vec![500.0, 1500.0],
            ssim: SsimConfig::default(),
            timing_fields: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub environment: EnvironmentConfig,
    pub source: SourceSpec,
    pub oracle: OracleConfig,
    pub dataset: DatasetConfig,
    /// `input_shape` always follows `grid`.
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub eval: EvalSpec,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let grid = GridSpec::desk();
        PipelineConfig {
            grid,
            environment: EnvironmentConfig::default(),
            source: SourceSpec::default(),
            oracle: OracleConfig {
                summation: Summation::Incoherent,
                ..OracleConfig::default()
            },
            dataset: DatasetConfig::standard(1),
            model: ModelConfig {
                input_shape: grid.shape(),
                ..ModelConfig::default()
            },
            train: TrainSpec::default(),
            eval: EvalSpec::default(),
            output_dir: PathBuf::from("oceantl-out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Copies derived settings into place.
    pub fn sync(&mut self) {
        self.model.input_shape = self.grid.shape();
        self.train.clip_db = self.oracle.clip_db;
    }

    /// Reseeds everything random: scenario draws (task `i` gets
    /// `seed + i`), model initialization and training.
    pub fn reseed(&mut self, seed: u64) {
        for t in &mut self.dataset.tasks {
            t.seed = seed.wrapping_add(t.task_id as u64);
        }
        self.model.init_seed = seed;
        self.train.seed = seed;
    }

    pub fn set_grid(&mut self, n_range: usize, n_depth: usize) {
        self.grid.n_range = n_range;
        self.grid.n_depth = n_depth;
        self.sync();
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.environment.profile.validate()?;
        if self.environment.n_layers == 0 {
            return Err(Error::Config("environment.n_layers must be at least 1".into()));
        }
        let flat = crate::bathymetry::BathymetryProfile::flat(self.grid.depth_max, self.grid.range_max, self.grid.depth_max)?;
        self.source.validate(&flat)?;
        self.oracle.validate()?;
        self.dataset.validate(&self.grid)?;
        if self.model.input_shape != self.grid.shape() {
            return Err(Error::Config(format!("model input {:?} does not match grid {:?}", self.model.input_shape, self.grid.shape())));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.eval.ssim.validate()?;
        for &d in &self.eval.probe_depths {
            if !(0.0..=self.grid.depth_max).contains(&d) {
                return Err(Error::Config(format!("probe depth {d} m is outside the grid")));
            }
        }
        let ids: std::collections::BTreeSet<usize> = self.dataset.tasks.iter().map(|t| t.task_id).collect();
        if ids.len() != self.dataset.tasks.len() {
            return Err(Error::Config("task ids must be unique".into()));
        }
        Ok(())
    }

    pub fn oracle(&self) -> Result<RayOracle> {
        RayOracle::new(&self.environment.profile, self.environment.n_layers, self.source.clone(), self.grid, self.oracle.clone())
    }
}
