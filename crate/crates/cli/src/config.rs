//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fmlctl::data::DatasetConfig;
use fmlctl::fml::TrainConfig;
use fmlctl::harness::{ClosedLoopConfig, DEFAULT_T_SETTLE};
use fmlctl::mpc::MpcConfig;
use fmlctl::plant;
use fmlctl::rl::RlConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    None,
    Drl,
    Mpc,
    OracleMpc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub plant: PlantSection,
    pub data: DatasetConfig,
    pub fml: FmlSection,
    pub rl: RlSection,
    pub mpc: MpcConfig,
    pub control: ControlSection,
    pub validate: ValidateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            out_dir: PathBuf::from("out"),
            seed: 0,
            plant: PlantSection::default(),
            data: DatasetConfig::default(),
            fml: FmlSection::default(),
            rl: RlSection::default(),
            mpc: MpcConfig::default(),
            control: ControlSection::default(),
            validate: ValidateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub regime: f64,
    pub dt: f64,
    pub t_spin: f64,
    pub h0: usize,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            regime: 300.0,
            dt: plant::DEFAULT_DT,
            t_spin: plant::DEFAULT_T_SPIN,
            h0: plant::DEFAULT_H0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmlSection {
    /// Dataset directory; defaults to `<out_dir>/dataset`.
    pub dataset: Option<PathBuf>,
    pub n_m: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for FmlSection {
    fn default() -> Self {
        Self {
            dataset: None,
            n_m: 20,
            hidden: vec![50; 4],
            train: TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlSection {
    /// Regimes whose spinup histories seed the episodes.
    pub pool_regimes: Vec<f64>,
    /// Spinup durations per regime; different values give different phases.
    pub pool_t_spins: Vec<f64>,
    pub ppo: RlConfig,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            pool_regimes: vec![300.0],
            pool_t_spins: (0..16).map(|k| 100.0 + 0.5 * k as f64).collect(),
            ppo: RlConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub controller: ControllerKind,
    pub duration: f64,
    pub t_settle: f64,
    /// Flow-map file; defaults to `<out_dir>/model.json`.
    pub model: Option<PathBuf>,
    /// Policy file; defaults to `<out_dir>/policy.json`.
    pub policy: Option<PathBuf>,
    /// Sample DRL actions instead of using the policy mean.
    pub stochastic: bool,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            controller: ControllerKind::None,
            duration: fmlctl::harness::DEFAULT_DURATION,
            t_settle: DEFAULT_T_SETTLE,
            model: None,
            policy: None,
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub regimes: Vec<f64>,
    pub trajectories: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            regimes: vec![300.0],
            trajectories: 10,
            steps: 200,
            seed: 1_000_003,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| fmlctl::Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(fmlctl::Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.fml.dataset.clone().unwrap_or_else(|| self.out_dir.join("dataset"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.control.model.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn policy_path(&self) -> PathBuf {
        self.control.policy.clone().unwrap_or_else(|| self.out_dir.join("policy.json"))
    }

    pub fn closed_loop(&self) -> ClosedLoopConfig {
        ClosedLoopConfig {
            dt: self.plant.dt,
            t_spin: self.plant.t_spin,
            h0: self.plant.h0,
            duration: self.control.duration,
            cost: self.mpc.cost,
        }
    }
}
