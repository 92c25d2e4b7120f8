//! Flat TOML experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentKind};
use crate::env::{FeatureParams, GenerationConfig};
use crate::error::{Error, Result};

/// Every key of an experiment. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_envs: usize,
    pub base_seed: u64,
    pub agents: Vec<AgentKind>,
    pub training_episodes: usize,
    /// Evaluation episodes per environment; each produces one record per agent.
    pub episodes_per_env: usize,
    pub init_samples: usize,
    /// Largest tolerated fraction of seeds whose generation fails.
    pub max_skip_rate: f64,
    /// Write measured wall times; off keeps record files reproducible.
    pub record_timing: bool,

    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    pub slip: f64,
    pub stay_enabled: bool,
    pub stay_slips: bool,
    pub anchors_x: usize,
    pub anchors_y: usize,
    pub bandwidth: f64,
    pub lookahead: f64,
    pub wall_density: f64,
    pub reward_width: f64,
    pub reward_noise: f64,
    pub hazard_count: usize,
    pub hazard_strength: f64,
    pub reward_hazard_strength: f64,
    pub background: f64,
    pub corridor_spacing: f64,
    pub approach_min: f64,
    pub approach_max: f64,
    pub hazard_clearance: f64,
    pub start_margin: f64,
    pub start_probability: f64,
    pub max_retries: usize,

    pub delta: f64,
    pub delta_cap: f64,
    pub sigma: f64,
    pub beta: f64,
    pub theoretical_beta: bool,
    pub ridge: f64,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    pub l_phi: f64,
    pub lambda_init: f64,
    pub kappa: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub known_dynamics: bool,
    pub prior_strength: f64,
    pub span_tolerance: f64,
    pub linear_ridge: f64,
    pub linear_threshold: f64,
    pub safe_planning: bool,

    pub records_file: PathBuf,
    pub summary_file: PathBuf,
    pub config_file: PathBuf,
    pub plot_file: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        let a = AgentConfig::default();
        Self {
            num_envs: 100,
            base_seed: 0,
            agents: AgentKind::ALL.to_vec(),
            training_episodes: 20,
            episodes_per_env: 1,
            init_samples: 10,
            max_skip_rate: 0.1,
            record_timing: false,
            width: g.width,
            height: g.height,
            horizon: g.horizon,
            slip: g.slip,
            stay_enabled: g.stay_enabled,
            stay_slips: g.stay_slips,
            anchors_x: g.features.anchors_x,
            anchors_y: g.features.anchors_y,
            bandwidth: g.features.bandwidth,
            lookahead: g.features.lookahead,
            wall_density: g.wall_density,
            reward_width: g.reward_width,
            reward_noise: g.reward_noise,
            hazard_count: g.hazard_count,
            hazard_strength: g.hazard_strength,
            reward_hazard_strength: g.reward_hazard_strength,
            background: g.background,
            corridor_spacing: g.corridor_spacing,
            approach_min: g.approach_min,
            approach_max: g.approach_max,
            hazard_clearance: g.hazard_clearance,
            start_margin: g.start_margin,
            start_probability: g.start_probability,
            max_retries: g.max_retries,
            delta: a.delta,
            delta_cap: a.delta_cap,
            sigma: a.sigma,
            beta: a.beta,
            theoretical_beta: a.theoretical_beta,
            ridge: a.ridge,
            mle_tol: a.mle_tol,
            mle_max_iter: a.mle_max_iter,
            l_phi: a.l_phi,
            lambda_init: a.lambda_init,
            kappa: a.kappa,
            lambda_min: a.lambda_min,
            lambda_max: a.lambda_max,
            known_dynamics: a.known_dynamics,
            prior_strength: a.prior_strength,
            span_tolerance: a.span_tolerance,
            linear_ridge: a.linear_ridge,
            linear_threshold: a.linear_threshold,
            safe_planning: a.safe_planning,
            records_file: "records.csv".into(),
            summary_file: "summary.json".into(),
            config_file: "config.toml".into(),
            plot_file: "summary.svg".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            width: self.width,
            height: self.height,
            horizon: self.horizon,
            slip: self.slip,
            stay_enabled: self.stay_enabled,
            stay_slips: self.stay_slips,
            features: FeatureParams {
                anchors_x: self.anchors_x,
                anchors_y: self.anchors_y,
                bandwidth: self.bandwidth,
                lookahead: self.lookahead,
            },
            wall_density: self.wall_density,
            reward_width: self.reward_width,
            reward_noise: self.reward_noise,
            hazard_count: self.hazard_count,
            hazard_strength: self.hazard_strength,
            reward_hazard_strength: self.reward_hazard_strength,
            background: self.background,
            corridor_spacing: self.corridor_spacing,
            approach_min: self.approach_min,
            approach_max: self.approach_max,
            hazard_clearance: self.hazard_clearance,
            start_margin: self.start_margin,
            start_probability: self.start_probability,
            delta: self.delta,
            l_phi: self.l_phi,
            max_retries: self.max_retries,
        }
    }

    pub fn agent(&self) -> AgentConfig {
        AgentConfig {
            delta: self.delta,
            delta_cap: self.delta_cap,
            sigma: self.sigma,
            beta: self.beta,
            theoretical_beta: self.theoretical_beta,
            ridge: self.ridge,
            mle_tol: self.mle_tol,
            mle_max_iter: self.mle_max_iter,
            l_phi: self.l_phi,
            lambda_init: self.lambda_init,
            kappa: self.kappa,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            known_dynamics: self.known_dynamics,
            prior_strength: self.prior_strength,
            span_tolerance: self.span_tolerance,
            linear_ridge: self.linear_ridge,
            linear_threshold: self.linear_threshold,
            safe_planning: self.safe_planning,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 {
            return Err(Error::Config("num_envs must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("at least one agent is required".into()));
        }
        let mut seen = self.agents.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.agents.len() {
            return Err(Error::Config("agents must not repeat".into()));
        }
        if self.episodes_per_env == 0 {
            return Err(Error::Config("episodes_per_env must be at least 1".into()));
        }
        if self.init_samples == 0 {
            return Err(Error::Config("init_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_skip_rate) {
            return Err(Error::Config(format!(
                "max_skip_rate must lie in [0,1], got {}",
                self.max_skip_rate
            )));
        }
        self.generation().validate()?;
        self.agent().validate()
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}
