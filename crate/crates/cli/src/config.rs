//! Experiment configuration files.

use std::path::{Path, PathBuf};

use pdnac_core::driver::Schedule;
use pdnac_core::features::FeatureSpec;
use pdnac_core::linalg::Vector;
use pdnac_core::policy::{LinearFeaturesDoc, PolicyFamily};
use pdnac_core::{Error, ParamPolicy, Result, TabularCmdp};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    /// The built-in two-state benchmark.
    Benchmark {},
    /// A CMDP document; relative paths resolve against the config's directory.
    File { path: PathBuf },
    RandomErgodic { n_states: usize, n_actions: usize, seed: u64, smoothing: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Tabular {},
    /// `d` rows of length `n_states * n_actions`.
    Linear { rows: Vec<Vec<f64>> },
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Tabular {}
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticFeatures {
    pub reward: FeatureSpec,
    pub cost: FeatureSpec,
}

impl Default for CriticFeatures {
    fn default() -> Self {
        let spec = FeatureSpec::AnchoredOneHot { anchor: None };
        CriticFeatures { reward: spec.clone(), cost: spec }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSection {
    /// Defaults to the oracle's recommendation, or a fixed fallback without oracle.
    #[serde(default)]
    pub c_gamma: Option<f64>,
    pub gamma_xi: f64,
    /// MLMC truncation; defaults to the sample budget `T` of each cell.
    #[serde(default)]
    pub t_max: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSection {
    pub gamma_omega: f64,
    #[serde(default = "default_mu")]
    pub mu_ridge: f64,
    #[serde(default)]
    pub t_max: Option<usize>,
}

fn default_mu() -> f64 {
    pdnac_core::actor::DEFAULT_MU_RIDGE
}

/// Replace values derived from the schedule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default)]
    pub k_epochs: Option<usize>,
    #[serde(default)]
    pub h_inner: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    /// Also log one row per inner step.
    #[serde(default)]
    pub inner: bool,
    /// Fill the `wall_ms` column. Off by default so outputs are reproducible.
    #[serde(default)]
    pub wall_clock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub instance: InstanceSource,
    #[serde(default)]
    pub policy: PolicySpec,
    /// Initial policy parameters; zeros when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub features: CriticFeatures,
    pub schedule: Schedule,
    pub t_grid: Vec<u64>,
    pub seeds: Vec<u64>,
    /// Slater parameter; defaults to the oracle's margin.
    #[serde(default)]
    pub delta: Option<f64>,
    pub critic: CriticSection,
    pub actor: ActorSection,
    #[serde(default)]
    pub overrides: Overrides,
    /// Attach the exact oracle for gap and violation tracking.
    #[serde(default = "yes")]
    pub attach_oracle: bool,
    #[serde(default)]
    pub telemetry: Telemetry,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative instance paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let InstanceSource::File { path: p } = &mut cfg.instance {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("t_grid and seeds must be non-empty".into()));
        }
        if self.t_grid.iter().any(|&t| t < 2) {
            return Err(Error::Config("every budget in t_grid must be at least 2".into()));
        }
        let mut budgets = self.t_grid.clone();
        budgets.sort_unstable();
        budgets.dedup();
        if budgets.len() != self.t_grid.len() {
            return Err(Error::Config("t_grid entries must be distinct".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("delta must lie in (0, 1), got {d}")));
            }
        }
        if !self.attach_oracle && self.delta.is_none() {
            return Err(Error::Config("delta is required when the oracle is not attached".into()));
        }
        Ok(())
    }

    pub fn build_instance(&self) -> Result<TabularCmdp> {
        match &self.instance {
            InstanceSource::Benchmark {} => Ok(TabularCmdp::benchmark()),
            InstanceSource::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read instance {}: {e}", path.display())))?;
                TabularCmdp::from_json(&text)
            }
            InstanceSource::RandomErgodic { n_states, n_actions, seed, smoothing } => {
                TabularCmdp::random_ergodic(*n_states, *n_actions, *seed, *smoothing)
            }
        }
    }

    pub fn build_policy(&self, cmdp: &TabularCmdp) -> Result<ParamPolicy> {
        let (ns, na) = (cmdp.n_states(), cmdp.n_actions());
        let base = match &self.policy {
            PolicySpec::Tabular {} => ParamPolicy::tabular(ns, na),
            PolicySpec::Linear { rows } => {
                let family = PolicyFamily::linear_from_doc(&LinearFeaturesDoc { n_states: ns, n_actions: na, rows: rows.clone() })?;
                let d = family.dim();
                ParamPolicy::new(family, Vector::zeros(d))?
            }
        };
        match &self.theta0 {
            None => Ok(base),
            Some(t) if t.len() == base.dim() => base.with_theta(Vector::from_vec(t.clone())),
            Some(t) => Err(Error::Config(format!("theta0 has {} entries, policy needs {}", t.len(), base.dim()))),
        }
    }
}
