//! Outer primal-dual loop.
//!
//! Each epoch runs the reward and cost critics, then the reward and cost NPG
//! loops, combines `omega = omega_r + lambda omega_c`, takes the primal step
//! `theta += alpha omega` and finally the projected dual step
//! `lambda = clip(lambda - beta eta_c, 0, 2/delta)`.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::actor::{run_npg, ActorConfig, ActorJob};
use crate::cmdp::{ChainCursor, Signal, TabularCmdp};
use crate::critic::{run_critic, CriticConfig, CriticJob, CriticVec};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::inner::InnerLoop;
use crate::linalg::Vector;
use crate::oracle::{self, solve_cmdp_lp, CmdpLpSolution};
use crate::policy::ParamPolicy;
use crate::rng::{self, tag};
use crate::telemetry::TelemetrySink;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `H = h_const tau^2 ceil(log2 T)^2`, `K = T / H`.
    KnownMixing { tau_mix: f64, h_const: f64 },
    /// `H = T^epsilon`, `K = T^(1 - epsilon)`.
    UnknownMixing { epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScheduleParams {
    pub k_epochs: usize,
    pub h_inner: usize,
    pub alpha: f64,
    pub beta: f64,
}

pub fn schedule_params(t_budget: u64, schedule: &Schedule) -> Result<ScheduleParams> {
    if t_budget < 2 {
        return Err(Error::config("sample budget T must be at least 2"));
    }
    let t = t_budget as f64;
    let h = match *schedule {
        Schedule::KnownMixing { tau_mix, h_const } => {
            if !(tau_mix >= 1.0 && h_const > 0.0) {
                return Err(Error::config("known-mixing schedule needs tau_mix >= 1 and h_const > 0"));
            }
            let log_t = t.log2().ceil();
            (h_const * tau_mix * tau_mix * log_t * log_t).ceil().max(1.0)
        }
        Schedule::UnknownMixing { epsilon } => {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(Error::config(format!("epsilon must lie in (0, 1), got {epsilon}")));
            }
            t.powf(epsilon).round().max(1.0)
        }
    } as usize;
    Ok(ScheduleParams {
        k_epochs: (t_budget / h as u64) as usize,
        h_inner: h,
        alpha: t.powf(-0.5),
        beta: t.powf(-0.5),
    })
}

/// Step sizes prescribed by the inner-loop analysis and the conditions under
/// which that analysis applies. Only reported; the configured steps are used.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepSizeCheck {
    pub gamma_xi_prescribed: f64,
    pub gamma_xi_limit: f64,
    pub gamma_xi_ok: bool,
    pub t_max_critic_ok: bool,
    pub gamma_omega_prescribed: f64,
    pub gamma_omega_limit: f64,
    pub gamma_omega_ok: bool,
    pub t_max_actor_ok: bool,
}

/// `gamma_xi = 2 log T / (lambda H) <= lambda / (24 c^2 tau log T_max)` with
/// `T_max >= 8 c^2 tau / lambda`, and
/// `gamma_omega = 2 log T / (mu H) <= mu / (4 (6 G1^4 tau + 2 G1^2 tau^2) log T_max)`
/// with `T_max >= 8 G1^4 tau / mu`.
pub fn step_size_check(
    t_budget: u64,
    h_inner: usize,
    lambda_hat: f64,
    c_gamma: f64,
    mu: f64,
    g1: f64,
    tau_mix: f64,
    t_max: usize,
) -> StepSizeCheck {
    let log_t = (t_budget as f64).ln();
    let log_tmax = (t_max as f64).ln().max(f64::MIN_POSITIVE);
    let h = h_inner as f64;
    let gamma_xi_prescribed = 2.0 * log_t / (lambda_hat * h);
    let gamma_xi_limit = lambda_hat / (24.0 * c_gamma * c_gamma * tau_mix * log_tmax);
    let gamma_omega_prescribed = 2.0 * log_t / (mu * h);
    let g1_2 = g1 * g1;
    let gamma_omega_limit = mu / (4.0 * (6.0 * g1_2 * g1_2 * tau_mix + 2.0 * g1_2 * tau_mix * tau_mix) * log_tmax);
    StepSizeCheck {
        gamma_xi_prescribed,
        gamma_xi_limit,
        gamma_xi_ok: gamma_xi_prescribed <= gamma_xi_limit,
        t_max_critic_ok: t_max as f64 >= 8.0 * c_gamma * c_gamma * tau_mix / lambda_hat,
        gamma_omega_prescribed,
        gamma_omega_limit,
        gamma_omega_ok: gamma_omega_prescribed <= gamma_omega_limit,
        t_max_actor_ok: t_max as f64 >= 8.0 * g1_2 * g1_2 * tau_mix / mu,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PdConfig {
    pub k_epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Slater margin used for the dual projection interval `[0, 2/delta]`.
    pub delta: f64,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
}

impl PdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("alpha and beta must be finite and non-negative"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        self.critic.validate()?;
        self.actor.validate()
    }

    pub fn lambda_cap(&self) -> f64 {
        2.0 / self.delta
    }
}

/// `clip(lambda - beta eta_c, 0, 2/delta)`.
pub fn dual_update(lambda: f64, beta: f64, eta_c: f64, delta: f64) -> f64 {
    (lambda - beta * eta_c).clamp(0.0, 2.0 / delta)
}

/// `theta + alpha omega`.
pub fn primal_update(theta: &Vector, alpha: f64, omega: &Vector) -> Result<Vector> {
    if theta.len() != omega.len() {
        return Err(Error::Contract("direction dimension differs from theta".into()));
    }
    if !omega.iter().all(|x| x.is_finite()) {
        return Err(Error::Divergence("NPG direction is not finite".into()));
    }
    Ok(theta + omega * alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub k: usize,
    /// Dual variable used in this epoch.
    pub lambda: f64,
    pub eta_r: f64,
    pub eta_c: f64,
    #[serde(rename = "J_r_exact", skip_serializing_if = "Option::is_none")]
    pub j_r: Option<f64>,
    #[serde(rename = "J_c_exact", skip_serializing_if = "Option::is_none")]
    pub j_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<f64>,
    pub samples_so_far: u64,
}

/// Exact reference attached to a run.
#[derive(Clone, Debug)]
pub struct OracleAttachment {
    pub lp: CmdpLpSolution,
    /// Also compute exact inner-loop targets for telemetry (costly).
    pub inner_targets: bool,
}

impl OracleAttachment {
    pub fn new(cmdp: &TabularCmdp) -> Result<Self> {
        Ok(OracleAttachment { lp: solve_cmdp_lp(cmdp)?, inner_targets: false })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub k_epochs: usize,
    pub total_samples: u64,
    pub final_lambda: f64,
    pub lambda_in_range: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_j_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_j_c: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
    pub final_policy: ParamPolicy,
}

/// Receives one row per epoch on top of the inner-loop rows.
pub trait RunSink: TelemetrySink {
    /// Called with the parameters `theta_k` used by epoch `k`, before its inner loops.
    fn policy(&mut self, _k: usize, _theta: &Vector) {}

    fn epoch(&mut self, _record: &RunRecord) {}
}

impl RunSink for crate::telemetry::NullSink {}

impl RunSink for crate::telemetry::VecSink {}

pub struct RunInputs<'a> {
    pub cmdp: &'a TabularCmdp,
    pub policy0: &'a ParamPolicy,
    pub features_r: &'a FeatureMap,
    pub features_c: &'a FeatureMap,
    pub seed: u64,
    pub oracle: Option<&'a OracleAttachment>,
}

pub fn run_pdnac(inputs: &RunInputs<'_>, cfg: &PdConfig, sink: &mut dyn RunSink) -> Result<RunOutput> {
    cfg.validate()?;
    let cmdp = inputs.cmdp;
    inputs.policy0.check_compatible(cmdp)?;
    for f in [inputs.features_r, inputs.features_c] {
        if f.n_states() != cmdp.n_states() {
            return Err(Error::config("value features do not match the instance"));
        }
    }
    let mut cursor = ChainCursor::from_initial(cmdp, &mut rng::stream(inputs.seed, &[tag::INITIAL_STATE]));
    let mut policy = inputs.policy0.clone();
    let mut lambda = 0.0;
    let mut records = Vec::with_capacity(cfg.k_epochs);
    let cap = cfg.lambda_cap();
    let mut lambda_in_range = true;
    info!(
        "pdnac: K = {}, H = {}/{}, alpha = {:.3e}, beta = {:.3e}, delta = {:.4}, T_max = {}",
        cfg.k_epochs, cfg.critic.h_inner, cfg.actor.h_inner, cfg.alpha, cfg.beta, cfg.delta, cfg.critic.mlmc.t_max
    );

    for k in 0..cfg.k_epochs {
        let exact = match inputs.oracle {
            Some(_) => {
                let probs = policy.probs_table()?;
                Some((
                    oracle::average_value(cmdp, &probs, Signal::Reward)?,
                    oracle::average_value(cmdp, &probs, Signal::Cost)?,
                ))
            }
            None => None,
        };
        let want_targets = sink.wants_inner() && inputs.oracle.is_some_and(|o| o.inner_targets);
        let xi_targets: Option<(CriticVec, CriticVec)> = if want_targets {
            let r = oracle::exact_critic_fixpoint(cmdp, &policy, inputs.features_r, cfg.critic.c_gamma, Signal::Reward);
            let c = oracle::exact_critic_fixpoint(cmdp, &policy, inputs.features_c, cfg.critic.c_gamma, Signal::Cost);
            match (r, c) {
                (Ok(r), Ok(c)) => Some((r.xi, c.xi)),
                _ => None,
            }
        } else {
            None
        };

        sink.policy(k, policy.theta());
        let mut critic_rng = rng::stream(inputs.seed, &[tag::CRITIC, k as u64]);
        let xis = run_critic(
            &mut InnerLoop { cmdp, policy: &policy, cursor: &mut cursor, rng: &mut critic_rng, epoch: k, sink: &mut *sink },
            &cfg.critic,
            &[
                CriticJob { which: Signal::Reward, features: inputs.features_r, target: xi_targets.as_ref().map(|t| &t.0) },
                CriticJob { which: Signal::Cost, features: inputs.features_c, target: xi_targets.as_ref().map(|t| &t.1) },
            ],
        )?;

        let omega_targets = if want_targets {
            match (
                oracle::exact_npg(cmdp, &policy, Signal::Reward, cfg.actor.mu_ridge),
                oracle::exact_npg(cmdp, &policy, Signal::Cost, cfg.actor.mu_ridge),
            ) {
                (Ok(r), Ok(c)) => Some((r, c)),
                _ => None,
            }
        } else {
            None
        };
        let mut actor_rng = rng::stream(inputs.seed, &[tag::ACTOR, k as u64]);
        let omegas = run_npg(
            &mut InnerLoop { cmdp, policy: &policy, cursor: &mut cursor, rng: &mut actor_rng, epoch: k, sink: &mut *sink },
            &cfg.actor,
            &[
                ActorJob {
                    which: Signal::Reward,
                    xi: &xis[0],
                    features: inputs.features_r,
                    target: omega_targets.as_ref().map(|t| &t.0),
                },
                ActorJob {
                    which: Signal::Cost,
                    xi: &xis[1],
                    features: inputs.features_c,
                    target: omega_targets.as_ref().map(|t| &t.1),
                },
            ],
        )?;

        let omega = &omegas[0] + &omegas[1] * lambda;
        let theta = primal_update(policy.theta(), cfg.alpha, &omega)
            .map_err(|e| Error::Divergence(format!("epoch {k}: {e}")))?;
        policy = policy.with_theta(theta)?;
        let eta_c = xis[1].eta;

        let record = RunRecord {
            k,
            lambda,
            eta_r: xis[0].eta,
            eta_c,
            j_r: exact.map(|e| e.0),
            j_c: exact.map(|e| e.1),
            gap: exact.and_then(|e| inputs.oracle.map(|o| o.lp.j_star - e.0)),
            violation: exact.map(|e| (-e.1).max(0.0)),
            samples_so_far: cursor.steps(),
        };
        debug!("epoch {k}: lambda = {lambda:.4}, eta_r = {:.4}, eta_c = {eta_c:.4}", record.eta_r);
        sink.epoch(&record);
        records.push(record);

        lambda = dual_update(lambda, cfg.beta, eta_c, cfg.delta);
        if !(0.0..=cap).contains(&lambda) {
            lambda_in_range = false;
            warn!("dual variable {lambda} left [0, {cap}]");
        }
    }

    let k = records.len() as f64;
    let avg = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<f64> {
        if records.is_empty() {
            return None;
        }
        records.iter().map(f).sum::<Option<f64>>().map(|s| s / k)
    };
    let summary = RunSummary {
        k_epochs: records.len(),
        total_samples: cursor.steps(),
        final_lambda: lambda,
        lambda_in_range: lambda_in_range && records.iter().all(|r| (0.0..=cap).contains(&r.lambda)),
        j_star: inputs.oracle.map(|o| o.lp.j_star),
        avg_gap: avg(&|r| r.gap),
        avg_violation: avg(&|r| r.violation),
        avg_j_r: avg(&|r| r.j_r),
        avg_j_c: avg(&|r| r.j_c),
    };
    Ok(RunOutput { records, summary, final_policy: policy })
}

/// If `(J* - avg J_r) + C max(0, -avg J_c) <= zeta` with `C = 2/delta`, the
/// averaged violation is at most `2 zeta / C = delta zeta`. Returns
/// `(zeta, delta zeta)` for a summary with oracle fields.
pub fn violation_extraction(summary: &RunSummary, delta: f64) -> Option<(f64, f64)> {
    let (j_star, jr, jc) = (summary.j_star?, summary.avg_j_r?, summary.avg_j_c?);
    let c = 2.0 / delta;
    let zeta = (j_star - jr) + c * (-jc).max(0.0);
    Some((zeta, 2.0 * zeta / c))
}
