//! Exact tabular ground truth: stationary laws, values, gradients, Fisher
//! matrices, the critic fixed point and the constrained optimum.

pub mod critic_fixpoint;
pub mod gradient;
pub mod lp;
pub mod stationary;
pub mod values;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

pub use critic_fixpoint::{
    critic_system, critic_system_table, exact_critic_fixpoint, exact_critic_fixpoint_min_norm,
    recommended_c_gamma, CriticFixpoint, CriticSystem,
};
pub use gradient::{
    exact_fisher, exact_npg, exact_npg_bundle, exact_policy_gradient, lagrangian, npg_direction, NpgBundle,
};
pub use lp::{
    deterministic_policies, dual_value, mixture_policy, policy_from_occupancy, slater_margin, solve_cmdp_lp,
    CmdpLpSolution,
};
pub use stationary::{stationary_dist, stationary_table, PolicyTable, StationaryInfo};
pub use values::{average_value, bellman_residual, check_value_bounds, exact_values, exact_values_pair, ValueBundle};

use crate::cmdp::{find_ergodicity_violation, Signal, TabularCmdp};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::rng::{self, tag};

/// `stationary` for a parametrized policy.
pub fn stationary(cmdp: &TabularCmdp, policy: &crate::policy::ParamPolicy) -> Result<StationaryInfo> {
    policy.check_compatible(cmdp)?;
    stationary_table(cmdp, &policy.probs_table()?)
}

/// Uniform policy followed by `n` random policies (alternately deterministic
/// and Dirichlet(1) stochastic).
pub fn probe_policies(cmdp: &TabularCmdp, n: usize, seed: u64) -> Vec<PolicyTable> {
    let (ns, na) = (cmdp.n_states(), cmdp.n_actions());
    let mut rng = rng::stream(seed, &[tag::PROBE, 1]);
    let mut out = vec![vec![vec![1.0 / na as f64; na]; ns]];
    for i in 0..n {
        out.push(
            (0..ns)
                .map(|_| {
                    if i % 2 == 0 {
                        let pick = rng.random_range(0..na);
                        (0..na).map(|a| if a == pick { 1.0 } else { 0.0 }).collect()
                    } else {
                        let w: Vec<f64> = (0..na).map(|_| Exp1.sample(&mut rng)).collect();
                        let total: f64 = w.iter().sum();
                        w.iter().map(|x| x / total).collect()
                    }
                })
                .collect(),
        );
    }
    out
}

/// Instance-level summary printed by the `oracle` command.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub feasible: bool,
    pub j_star: Option<f64>,
    pub j_c_at_optimum: Option<f64>,
    pub slater_margin: f64,
    pub optimal_occupancy: Option<Vec<Vec<f64>>>,
    pub optimal_policy: Option<PolicyTable>,
    pub tau_mix_min: usize,
    pub tau_mix_max: usize,
    pub n_probe_policies: usize,
    /// Smallest feature covariance eigenvalue over the probe policies.
    pub lambda_hat: f64,
    pub recommended_c_gamma: Option<f64>,
}

pub fn oracle_report(cmdp: &TabularCmdp, features: &FeatureMap, n_probe: usize, seed: u64) -> Result<OracleReport> {
    if let Some(v) = find_ergodicity_violation(cmdp, n_probe, seed) {
        return Err(Error::Ergodicity(format!("chain is {} under policy {:?}", v.reason, v.policy)));
    }
    let probes = probe_policies(cmdp, n_probe, seed);
    let (mut tau_min, mut tau_max, mut lambda_hat) = (usize::MAX, 0usize, f64::INFINITY);
    for probs in &probes {
        let info = stationary_table(cmdp, probs)?;
        tau_min = tau_min.min(info.mixing_time);
        tau_max = tau_max.max(info.mixing_time);
        let sys = critic_system_table(cmdp, probs, features, 1.0, Signal::Reward)?;
        lambda_hat = lambda_hat.min(sys.lambda_min);
    }
    let delta = slater_margin(cmdp)?;
    let lp = match solve_cmdp_lp(cmdp) {
        Ok(sol) => Some(sol),
        Err(Error::Infeasible(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(OracleReport {
        n_states: cmdp.n_states(),
        n_actions: cmdp.n_actions(),
        feasible: lp.is_some(),
        j_star: lp.as_ref().map(|s| s.j_star),
        j_c_at_optimum: lp.as_ref().map(|s| s.j_c_star),
        slater_margin: delta,
        optimal_occupancy: lp.as_ref().map(|s| s.occupancy.clone()),
        optimal_policy: lp.map(|s| s.policy),
        tau_mix_min: tau_min,
        tau_mix_max: tau_max,
        n_probe_policies: probes.len(),
        lambda_hat,
        recommended_c_gamma: recommended_c_gamma(lambda_hat).ok(),
    })
}
