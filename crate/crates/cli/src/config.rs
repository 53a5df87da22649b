//! Experiment configuration: JSON file plus command-line overrides.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use lyapmin::perturbation::{PlanOptions, Regime};
use lyapmin::verifier::VerifyConfig;
use lyapmin::ExpandingMap;

fn default_epsilon() -> f64 {
    0.1
}
fn default_regime() -> Regime {
    Regime::Practical
}
fn default_max_period() -> usize {
    12
}
fn default_grid_n() -> usize {
    1 << 14
}
fn default_sample_count() -> usize {
    20
}
fn default_seed() -> u64 {
    1
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_slack() -> f64 {
    1e-3
}
fn default_rho() -> f64 {
    1e-3
}
fn default_c_select() -> f64 {
    10.0
}
fn default_anchor_period() -> usize {
    14
}
fn default_sum_samples() -> usize {
    100
}
fn default_birkhoff_count() -> usize {
    32
}
fn default_birkhoff_steps() -> usize {
    100_000
}
fn default_mollify_fraction() -> Option<f64> {
    Some(0.5)
}

/// One experiment: the map, the budget, and the knobs of every stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub map: ExpandingMap,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default = "default_max_period")]
    pub max_period: usize,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_c_select")]
    pub c_select: f64,
    #[serde(default = "default_anchor_period")]
    pub anchor_period: usize,
    #[serde(default = "default_sum_samples")]
    pub sum_samples: usize,
    #[serde(default = "default_birkhoff_count")]
    pub birkhoff_count: usize,
    #[serde(default = "default_birkhoff_steps")]
    pub birkhoff_steps: usize,
    #[serde(default = "default_mollify_fraction")]
    pub mollify_fraction: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.epsilon > 0.0, "epsilon must be positive");
        anyhow::ensure!(self.max_period >= 1, "max_period must be >= 1");
        anyhow::ensure!(self.grid_n >= 1 << 12, "grid_n must be >= 4096");
        anyhow::ensure!(self.sample_count >= 1, "sample_count must be >= 1");
        anyhow::ensure!(self.sum_samples >= 1, "sum_samples must be >= 1");
        Ok(())
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            regime: self.regime,
            grid_n: self.grid_n,
            max_period: self.max_period,
            anchor_max_period: self.anchor_period,
            slack: self.slack,
            rho: self.rho,
            c_select: self.c_select,
            mollify_fraction: self.mollify_fraction,
            ..PlanOptions::default()
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            sum_samples: self.sum_samples,
            max_period: self.max_period,
            far_grid_n: self.grid_n,
            birkhoff_count: self.birkhoff_count,
            birkhoff_steps: self.birkhoff_steps,
            seed: self.seed,
            ..VerifyConfig::default()
        }
    }
}
