//! Versioned JSON configuration for training and evaluation runs.

use crate::obs::ObsNoise;
use crate::planner::PlannerConfig;
use crate::rewards::RewardWeights;
use crate::rl::PpoConfig;
use crate::sim::{SimParams, SIM_DT};
use crate::{Error, Result};
use std::path::Path;

pub const CONFIG_VERSION: u32 = 1;

/// Terrain selection for the environment set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainMode {
    /// Single flat plane (smoke training).
    Flat,
    /// Twelve families with the ten-level curriculum.
    Curriculum,
}

/// Episode schedule and domain-randomization amplitudes.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub terrain: TerrainMode,
    /// Episode length (s).
    pub episode_length: f64,
    /// Push instant (s).
    pub push_time: f64,
    /// Push twist amplitude (m/s per linear axis).
    pub push_amplitude: f64,
    /// Command resample instants (s).
    pub command_resample_times: Vec<f64>,
    /// Noise/drift resample interval (s).
    pub noise_resample_interval: f64,
    /// Policy step (s).
    pub policy_dt: f64,
    /// Simulation substeps per policy step.
    pub sim_substeps: usize,
    /// Joint-target excursion per unit action (rad).
    pub action_scale: f64,
    pub friction_min: f64,
    pub friction_max: f64,
    /// External base wrench amplitude (N and N m).
    pub wrench_amplitude: f64,
    /// External foot force amplitude (N).
    pub foot_force_amplitude: f64,
    /// Master switch for pushes, wrench, foot forces, and map noise.
    pub randomize: bool,
    /// Distance from the spawn at which the border counts as reached (m).
    pub border_radius: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            terrain: TerrainMode::Curriculum,
            episode_length: 20.0,
            push_time: 10.0,
            push_amplitude: 1.0,
            command_resample_times: vec![5.0, 10.0, 15.0],
            noise_resample_interval: 8.0,
            policy_dt: 0.02,
            sim_substeps: 4,
            action_scale: 0.3,
            friction_min: 0.1,
            friction_max: 1.2,
            wrench_amplitude: 15.0,
            foot_force_amplitude: 2.0,
            randomize: true,
            border_radius: 3.95,
        }
    }
}

/// Training-run bookkeeping.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Checkpoint every this many epochs (and always at the end).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, seed: 1, checkpoint_interval: 100 }
    }
}

/// Top-level run configuration.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Config {
    pub version: u32,
    pub sim: SimParams,
    pub planner: PlannerConfig,
    pub rewards: RewardWeights,
    pub obs_noise: ObsNoise,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        if cfg.version == 0 {
            cfg.version = CONFIG_VERSION;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let e = &self.env;
        let substep_dt = e.policy_dt / e.sim_substeps as f64;
        if (substep_dt - SIM_DT).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "policy_dt / sim_substeps must equal the {SIM_DT} s simulation step"
            )));
        }
        if e.episode_length <= 0.0 || e.policy_dt <= 0.0 {
            return Err(Error::Config("episode_length and policy_dt must be positive".into()));
        }
        if self.ppo.num_envs == 0 || self.ppo.rollout_len == 0 {
            return Err(Error::Config("num_envs and rollout_len must be positive".into()));
        }
        Ok(())
    }

    /// Policy steps per episode.
    pub fn steps_per_episode(&self) -> usize {
        (self.env.episode_length / self.env.policy_dt).round() as usize
    }

    /// The smoke-training configuration: flat terrain, 128 environments,
    /// 500 epochs, seed 1.
    pub fn smoke() -> Config {
        let mut cfg = Config { version: CONFIG_VERSION, ..Default::default() };
        cfg.env.terrain = TerrainMode::Flat;
        cfg.ppo.num_envs = 128;
        cfg.train.epochs = 500;
        cfg.train.seed = 1;
        cfg
    }
}
