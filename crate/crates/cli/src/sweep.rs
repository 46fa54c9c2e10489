//! Sweeps of `run_pdnac` over `(T, seed)` cells.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use pdnac_core::actor::ActorConfig;
use pdnac_core::critic::{CriticConfig, FALLBACK_C_GAMMA};
use pdnac_core::driver::{
    run_pdnac, schedule_params, step_size_check, OracleAttachment, PdConfig, RunInputs, RunRecord, RunSink, RunSummary,
    Schedule, StepSizeCheck,
};
use pdnac_core::features::FeatureMap;
use pdnac_core::mlmc::MlmcConfig;
use pdnac_core::oracle::{oracle_report, recommended_c_gamma};
use pdnac_core::summary::{log_log_slope, median};
use pdnac_core::telemetry::{ActorRow, CriticRow, TelemetrySink};
use pdnac_core::{Error, ParamPolicy, Result, TabularCmdp};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{write_atomic, write_json};

/// Probe policies used to estimate mixing and feature constants.
const ORACLE_PROBES: usize = 32;
/// Fewest budgets over which a rate slope is fitted.
pub const MIN_SLOPE_POINTS: usize = 4;

/// Everything derived from a config once, before any cell runs.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub cmdp: TabularCmdp,
    pub policy0: ParamPolicy,
    pub features_r: FeatureMap,
    pub features_c: FeatureMap,
    pub oracle: Option<OracleAttachment>,
    pub resolved: Resolved,
}

/// Values filled in from the oracle or defaults, echoed into outputs.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub delta: f64,
    pub c_gamma: f64,
    pub lambda_hat: Option<f64>,
    pub j_star: Option<f64>,
    pub tau_mix_max: Option<usize>,
    pub policy_dim: usize,
}

pub fn prepare(config: ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let cmdp = config.build_instance()?;
    let policy0 = config.build_policy(&cmdp)?;
    let features_r = config.features.reward.build(cmdp.n_states())?;
    let features_c = config.features.cost.build(cmdp.n_states())?;
    let (oracle, lambda_hat, tau) = if config.attach_oracle {
        let oracle = OracleAttachment::new(&cmdp)?;
        let r = oracle_report(&cmdp, &features_r, ORACLE_PROBES, 0)?;
        let c = oracle_report(&cmdp, &features_c, ORACLE_PROBES, 0)?;
        (Some(oracle), Some(r.lambda_hat.min(c.lambda_hat)), Some(r.tau_mix_max))
    } else {
        (None, None, None)
    };
    let delta = match (config.delta, &oracle) {
        (Some(d), _) => d,
        (None, Some(o)) => o.lp.slater_margin.min(0.999),
        (None, None) => return Err(Error::Config("delta is required without the oracle".into())),
    };
    if !(delta > 0.0) {
        return Err(Error::Infeasible(format!("Slater margin {delta} is not positive")));
    }
    let c_gamma = match (config.critic.c_gamma, lambda_hat) {
        (Some(c), _) => c,
        (None, Some(l)) => recommended_c_gamma(l)?,
        (None, None) => {
            warn!("no oracle attached; using c_gamma = {FALLBACK_C_GAMMA}");
            FALLBACK_C_GAMMA
        }
    };
    let resolved = Resolved {
        delta,
        c_gamma,
        lambda_hat,
        j_star: oracle.as_ref().map(|o| o.lp.j_star),
        tau_mix_max: tau,
        policy_dim: policy0.dim(),
    };
    Ok(Prepared { config, cmdp, policy0, features_r, features_c, oracle, resolved })
}

/// Run parameters for one sample budget.
#[derive(Clone, Debug, Serialize)]
pub struct CellPlan {
    pub t_budget: u64,
    pub pd: PdConfig,
    pub step_check: Option<StepSizeCheck>,
}

pub fn plan(prep: &Prepared, t_budget: u64) -> Result<CellPlan> {
    let cfg = &prep.config;
    let sched = schedule_params(t_budget, &cfg.schedule)?;
    let h = cfg.overrides.h_inner.unwrap_or(sched.h_inner);
    let k = cfg.overrides.k_epochs.unwrap_or(if h == sched.h_inner { sched.k_epochs } else { (t_budget / h as u64) as usize });
    let t_default = usize::try_from(t_budget).map_err(|_| Error::Config("budget too large".into()))?;
    let critic_mlmc = MlmcConfig::new(cfg.critic.t_max.unwrap_or(t_default))?;
    let actor_mlmc = MlmcConfig::new(cfg.actor.t_max.unwrap_or(t_default))?;
    let pd = PdConfig {
        k_epochs: k,
        alpha: cfg.overrides.alpha.unwrap_or(sched.alpha),
        beta: cfg.overrides.beta.unwrap_or(sched.beta),
        delta: prep.resolved.delta,
        critic: CriticConfig {
            c_gamma: prep.resolved.c_gamma,
            gamma_xi: cfg.critic.gamma_xi,
            h_inner: h,
            mlmc: critic_mlmc,
            lambda_hat: prep.resolved.lambda_hat,
        },
        actor: ActorConfig { gamma_omega: cfg.actor.gamma_omega, h_inner: h, mlmc: actor_mlmc, mu_ridge: cfg.actor.mu_ridge },
    };
    pd.validate()?;
    let tau = match cfg.schedule {
        Schedule::KnownMixing { tau_mix, .. } => Some(tau_mix),
        Schedule::UnknownMixing { .. } => prep.resolved.tau_mix_max.map(|t| t as f64),
    };
    let step_check = match (prep.resolved.lambda_hat, tau) {
        (Some(l), Some(tau)) => {
            let c = step_size_check(t_budget, h, l, pd.critic.c_gamma, pd.actor.mu_ridge.max(f64::MIN_POSITIVE),
                prep.policy0.score_bound(), tau, critic_mlmc.t_max);
            info!(
                "T = {t_budget}: prescribed gamma_xi {:.3e} (limit {:.3e}), gamma_omega {:.3e} (limit {:.3e}); \
                 configured {:.3e} / {:.3e}",
                c.gamma_xi_prescribed, c.gamma_xi_limit, c.gamma_omega_prescribed, c.gamma_omega_limit,
                pd.critic.gamma_xi, pd.actor.gamma_omega
            );
            Some(c)
        }
        _ => None,
    };
    if let (Schedule::UnknownMixing { .. }, Some(tau)) = (cfg.schedule, tau) {
        if (h as f64) < tau * tau {
            warn!("T = {t_budget}: H = {h} is below tau_mix^2 = {}", tau * tau);
        }
    }
    Ok(CellPlan { t_budget, pd, step_check })
}

/// Serializes epoch and inner-loop rows as JSON lines.
struct LineSink {
    inner: bool,
    text: String,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    #[serde(rename = "type")]
    kind: &'a str,
    #[serde(flatten)]
    row: &'a T,
}

impl LineSink {
    fn push<T: Serialize>(&mut self, kind: &str, row: &T) {
        if let Ok(line) = serde_json::to_string(&Tagged { kind, row }) {
            self.text.push_str(&line);
            self.text.push('\n');
        }
    }
}

impl TelemetrySink for LineSink {
    fn wants_inner(&self) -> bool {
        self.inner
    }

    fn critic(&mut self, row: &CriticRow) {
        self.push("critic", row);
    }

    fn actor(&mut self, row: &ActorRow) {
        self.push("actor", row);
    }
}

impl RunSink for LineSink {
    fn epoch(&mut self, record: &RunRecord) {
        self.push("epoch", record);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    #[serde(rename = "T")]
    pub t_budget: u64,
    pub seed: u64,
    pub k_epochs: usize,
    pub h_inner: usize,
    pub avg_gap: Option<f64>,
    pub avg_violation: Option<f64>,
    pub total_samples: u64,
    pub final_lambda: f64,
    pub lambda_in_range: bool,
    pub max_lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Serialize)]
struct CellSummary<'a> {
    result: &'a CellResult,
    summary: &'a RunSummary,
    plan: &'a CellPlan,
    resolved: &'a Resolved,
    config_echo: &'a ExperimentConfig,
}

fn cell_dir(out: &Path, t: u64, seed: u64) -> PathBuf {
    out.join("cells").join(format!("T{t}")).join(format!("seed{seed}"))
}

/// Runs one cell; writes its telemetry and summary under `out` when given.
pub fn run_cell(prep: &Prepared, plan: &CellPlan, seed: u64, out: Option<&Path>) -> Result<CellResult> {
    let start = Instant::now();
    let inputs = RunInputs {
        cmdp: &prep.cmdp,
        policy0: &prep.policy0,
        features_r: &prep.features_r,
        features_c: &prep.features_c,
        seed,
        oracle: prep.oracle.as_ref(),
    };
    let mut sink = LineSink { inner: prep.config.telemetry.inner, text: String::new() };
    let run = run_pdnac(&inputs, &plan.pd, &mut sink)?;
    let result = CellResult {
        t_budget: plan.t_budget,
        seed,
        k_epochs: plan.pd.k_epochs,
        h_inner: plan.pd.critic.h_inner,
        avg_gap: run.summary.avg_gap,
        avg_violation: run.summary.avg_violation,
        total_samples: run.summary.total_samples,
        final_lambda: run.summary.final_lambda,
        lambda_in_range: run.summary.lambda_in_range,
        max_lambda: run.records.iter().map(|r| r.lambda).fold(run.summary.final_lambda, f64::max),
        wall_ms: prep.config.telemetry.wall_clock.then(|| start.elapsed().as_millis() as u64),
    };
    if let Some(out) = out {
        let dir = cell_dir(out, plan.t_budget, seed);
        write_atomic(&dir.join("epochs.jsonl"), sink.text.as_bytes())?;
        write_json(
            &dir.join("summary.json"),
            &CellSummary { result: &result, summary: &run.summary, plan, resolved: &prep.resolved, config_echo: &prep.config },
        )?;
    }
    Ok(result)
}

#[derive(Clone, Debug, Serialize)]
pub struct BudgetMedians {
    #[serde(rename = "T")]
    pub t_budget: u64,
    pub n_cells: usize,
    pub median_avg_gap: Option<f64>,
    pub median_avg_violation: Option<f64>,
    pub median_total_samples: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub config_echo: ExperimentConfig,
    pub resolved: Resolved,
    pub plans: Vec<CellPlan>,
    pub cells: Vec<CellResult>,
    pub per_t: Vec<BudgetMedians>,
    /// Least-squares slope of `log median avg_gap` against `log T`.
    pub slope_gap: Option<f64>,
    pub slope_violation: Option<f64>,
    pub lambda_in_range: bool,
}

fn medians(cells: &[CellResult], t: u64) -> BudgetMedians {
    let sel: Vec<&CellResult> = cells.iter().filter(|c| c.t_budget == t).collect();
    let col = |f: &dyn Fn(&CellResult) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = sel.iter().map(|c| f(c)).collect();
        v.and_then(|v| median(&v))
    };
    BudgetMedians {
        t_budget: t,
        n_cells: sel.len(),
        median_avg_gap: col(&|c| c.avg_gap),
        median_avg_violation: col(&|c| c.avg_violation),
        median_total_samples: col(&|c| Some(c.total_samples as f64)),
    }
}

/// Slope over budgets with a positive median; `None` below [`MIN_SLOPE_POINTS`].
fn slope(per_t: &[BudgetMedians], f: impl Fn(&BudgetMedians) -> Option<f64>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = per_t.iter().filter_map(|m| f(m).filter(|v| *v > 0.0).map(|v| (m.t_budget as f64, v))).collect();
    if pts.len() < MIN_SLOPE_POINTS {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    log_log_slope(&x, &y).ok()
}

pub fn results_csv(cells: &[CellResult]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("T,seed,avg_gap,avg_violation,total_samples,wall_ms\n");
    for c in cells {
        let wall = c.wall_ms.map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{},{}", c.t_budget, c.seed, fmt(c.avg_gap), fmt(c.avg_violation), c.total_samples, wall);
    }
    s
}

/// Runs every `(T, seed)` cell on the current rayon pool. Results are ordered
/// by the config's `t_grid` and `seeds`, independent of scheduling.
pub fn run_sweep(prep: &Prepared, out: Option<&Path>) -> Result<SweepSummary> {
    let plans: Vec<CellPlan> = prep.config.t_grid.iter().map(|&t| plan(prep, t)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..plans.len()).flat_map(|i| prep.config.seeds.iter().map(move |&s| (i, s))).collect();
    let cells: Vec<CellResult> =
        jobs.par_iter().map(|&(i, seed)| run_cell(prep, &plans[i], seed, out)).collect::<Result<_>>()?;
    let per_t: Vec<BudgetMedians> = prep.config.t_grid.iter().map(|&t| medians(&cells, t)).collect();
    let summary = SweepSummary {
        slope_gap: slope(&per_t, |m| m.median_avg_gap),
        slope_violation: slope(&per_t, |m| m.median_avg_violation),
        lambda_in_range: cells.iter().all(|c| c.lambda_in_range),
        config_echo: prep.config.clone(),
        resolved: prep.resolved.clone(),
        plans,
        cells,
        per_t,
    };
    if let Some(out) = out {
        write_json(&out.join("config.json"), &prep.config)?;
        write_atomic(&out.join("results.csv"), results_csv(&summary.cells).as_bytes())?;
        write_json(&out.join("summary.json"), &summary)?;
    }
    Ok(summary)
}
