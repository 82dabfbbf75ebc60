use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use smallnoise::diagnostics::AssumptionThresholds;
use smallnoise::studies::{LinearSpec, ModelSpec};

pub const SCHEMA: &str = "smallnoise-config-v1";
pub const SEED_ENV: &str = "SMALLNOISE_SEED";

/// Contents of a config file. Every section is optional; the subcommand
/// reports which ones it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    /// Master seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<ForgettingSection>,
    #[serde(default)]
    pub assumptions: AssumptionsSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_log_level() -> String {
    "warn".into()
}

fn default_model() -> ModelSpec {
    ModelSpec::Linear(LinearSpec::benchmark())
}

/// Single-trajectory settings shared by `simulate`, `filter` and `oracle-compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Required for models that do not fix their own noise scale.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub zero_noise: bool,
    #[serde(default)]
    pub m0: Option<Vec<f64>>,
    #[serde(default)]
    pub q0: Option<Vec<Vec<f64>>>,
    /// Number of paths compared by `oracle-compare`.
    #[serde(default = "default_oracle_paths")]
    pub oracle_paths: usize,
}

fn default_t_end() -> f64 {
    2.0
}

fn default_oracle_paths() -> usize {
    10
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            epsilon: None,
            dt: None,
            t_end: default_t_end(),
            zero_noise: false,
            m0: None,
            q0: None,
            oracle_paths: default_oracle_paths(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub eps_grid: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "default_q_orders")]
    pub q_orders: Vec<f64>,
    pub t_checkpoints: Vec<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub q0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub zero_noise: bool,
}

fn default_q_orders() -> Vec<f64> {
    vec![2.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgettingSection {
    pub epsilon: f64,
    pub initial_error_magnitudes: Vec<f64>,
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_q_order")]
    pub q_order: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub q0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_fit_threshold")]
    pub fit_threshold: f64,
    #[serde(default = "default_margin")]
    pub stability_margin: f64,
    #[serde(default)]
    pub stability_offsets: Vec<f64>,
}

fn default_q_order() -> f64 {
    2.0
}

fn default_fit_threshold() -> f64 {
    10.0
}

fn default_margin() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsSection {
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    /// The SI±S companion model uses `population × companion_factor`.
    #[serde(default = "default_companion_factor")]
    pub companion_factor: f64,
    /// Run a pilot filter and attach its stability report.
    #[serde(default = "default_true")]
    pub pilot: bool,
    #[serde(default = "default_pilot_offsets")]
    pub pilot_offsets: Vec<f64>,
    #[serde(default)]
    pub thresholds: AssumptionThresholds,
}

fn default_half_width() -> f64 {
    5.0
}

fn default_n_pairs() -> usize {
    10_000
}

fn default_companion_factor() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

fn default_pilot_offsets() -> Vec<f64> {
    vec![-1.0, 1.0]
}

impl Default for AssumptionsSection {
    fn default() -> Self {
        Self {
            half_width: default_half_width(),
            n_pairs: default_n_pairs(),
            companion_factor: default_companion_factor(),
            pilot: true,
            pilot_offsets: default_pilot_offsets(),
            thresholds: AssumptionThresholds::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.schema != SCHEMA {
            bail!("unsupported schema {:?}; expected {SCHEMA:?}", cfg.schema);
        }
        Ok(cfg)
    }

    /// Flag, then file, then `SMALLNOISE_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<()> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))?,
            ),
            Err(_) => None,
        };
        self.seed = Some(flag.or(self.seed).or(env).unwrap_or(0));
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
