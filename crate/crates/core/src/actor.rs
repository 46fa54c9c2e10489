//! Natural-policy-gradient subroutine: `H` MLMC-averaged steps on the
//! ridge-regularized quadratic `1/2 w^T (F + mu I) w - w^T grad J`.

use serde::Serialize;

use crate::cmdp::{Signal, Transition};
use crate::critic::CriticVec;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::inner::InnerLoop;
use crate::linalg::Vector;
use crate::mlmc::{MlmcConfig, MlmcWorkspace};
use crate::policy::ParamPolicy;
use crate::telemetry::ActorRow;

/// Default ridge added to the Fisher matrix.
pub const DEFAULT_MU_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActorConfig {
    pub gamma_omega: f64,
    pub h_inner: usize,
    pub mlmc: MlmcConfig,
    pub mu_ridge: f64,
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_omega >= 0.0 && self.gamma_omega.is_finite()) {
            return Err(Error::config(format!("gamma_omega must be >= 0, got {}", self.gamma_omega)));
        }
        if !(self.mu_ridge >= 0.0 && self.mu_ridge.is_finite()) {
            return Err(Error::config(format!("mu_ridge must be >= 0, got {}", self.mu_ridge)));
        }
        Ok(())
    }
}

/// Temporal-difference advantage `g - eta + <zeta, phi(s') - phi(s)>`.
pub fn td_advantage(xi: &CriticVec, z: &Transition, g_value: f64, features: &FeatureMap) -> f64 {
    g_value - xi.eta + xi.value_at(features, z.s_next) - xi.value_at(features, z.s)
}

/// Single-transition `(score score^T + mu I) w - A_hat score`, given the
/// score at `z` (precomputed by the caller).
pub fn npg_sample_grad_with_score(omega: &[f64], score: &[f64], advantage: f64, mu_ridge: f64, out: &mut [f64]) {
    let proj: f64 = score.iter().zip(omega).map(|(s, w)| s * w).sum();
    for i in 0..out.len() {
        out[i] = (proj - advantage) * score[i] + mu_ridge * omega[i];
    }
}

pub fn npg_sample_grad(
    omega: &[f64],
    z: &Transition,
    xi: &CriticVec,
    policy: &ParamPolicy,
    features: &FeatureMap,
    which: Signal,
    mu_ridge: f64,
) -> Result<Vector> {
    let probs = policy.action_probs(z.s)?;
    let mut score = vec![0.0; policy.dim()];
    policy.score_with_probs(z.s, z.a, &probs, &mut score);
    let mut out = vec![0.0; policy.dim()];
    npg_sample_grad_with_score(omega, &score, td_advantage(xi, z, z.value(which), features), mu_ridge, &mut out);
    Ok(Vector::from_vec(out))
}

/// One signal handled by [`run_npg`].
#[derive(Clone, Debug)]
pub struct ActorJob<'a> {
    pub which: Signal,
    /// Critic output, frozen for the whole loop.
    pub xi: &'a CriticVec,
    pub features: &'a FeatureMap,
    /// Exact NPG direction, for telemetry only.
    pub target: Option<&'a Vector>,
}

/// Runs the NPG loop for every job, starting from `omega = 0`. All jobs read
/// the same trajectory at each inner step.
pub fn run_npg(ctx: &mut InnerLoop<'_>, cfg: &ActorConfig, jobs: &[ActorJob<'_>]) -> Result<Vec<Vector>> {
    cfg.validate()?;
    let d = ctx.policy.dim();
    for job in jobs {
        if job.xi.m() != job.features.dim() {
            return Err(Error::config("critic vector does not match its features"));
        }
    }
    let probs = ctx.policy.probs_table()?;
    let mut omegas: Vec<Vec<f64>> = vec![vec![0.0; d]; jobs.len()];
    let mut workspaces: Vec<MlmcWorkspace> = (0..jobs.len()).map(|_| MlmcWorkspace::new(d)).collect();
    let mut grad = vec![0.0; d];
    let mut buf = Vec::with_capacity(cfg.mlmc.t_max.min(1 << 16));
    let mut scores: Vec<Vec<f64>> = Vec::new();
    let emit = ctx.sink.wants_inner();
    let g1 = ctx.policy.score_bound();

    for h in 0..cfg.h_inner {
        let draw = ctx.next_trajectory(&cfg.mlmc, &mut buf)?;
        // Scores depend only on the frozen policy; compute once per transition.
        scores.resize_with(buf.len(), || vec![0.0; d]);
        for (z, sc) in buf.iter().zip(scores.iter_mut()) {
            ctx.policy.score_with_probs(z.s, z.a, &probs[z.s], sc);
        }
        for (i, job) in jobs.iter().enumerate() {
            let omega = &omegas[i];
            // The estimator is called once per transition, in order.
            let mut t = 0;
            workspaces[i].estimate(
                |z, out| {
                    let adv = td_advantage(job.xi, z, z.value(job.which), job.features);
                    npg_sample_grad_with_score(omega, &scores[t], adv, cfg.mu_ridge, out);
                    t += 1;
                },
                &buf,
                &draw,
                &mut grad,
            )?;
            let omega = &mut omegas[i];
            for (w, g) in omega.iter_mut().zip(&grad) {
                *w -= cfg.gamma_omega * g;
            }
            let norm = omega.iter().map(|x| x * x).sum::<f64>().sqrt();
            let adv_bound = 2.0 + 2.0 * job.xi.norm();
            let bound = 1e3 * (1.0 + adv_bound * g1 / cfg.mu_ridge.max(1e-3));
            if !norm.is_finite() || norm > bound {
                return Err(Error::Divergence(format!(
                    "{} NPG loop left the admissible region at epoch {}, step {h}: ||omega|| = {norm:.3e} > {bound:.3e}; \
                     reduce gamma_omega (currently {})",
                    job.which, ctx.epoch, cfg.gamma_omega
                )));
            }
            if emit {
                ctx.sink.actor(&ActorRow {
                    k: ctx.epoch,
                    h,
                    which: job.which,
                    level: draw.level,
                    samples: draw.traj_len,
                    omega_norm: norm,
                    err_to_oracle: job
                        .target
                        .map(|t| t.iter().zip(omega.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()),
                });
            }
        }
    }
    Ok(omegas.into_iter().map(Vector::from_vec).collect())
}
