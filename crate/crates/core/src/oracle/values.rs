use serde::Serialize;

use crate::cmdp::{Signal, TabularCmdp};
use crate::error::{Error, Result};
use crate::linalg::{solve_checked, Mat, Vector};
use crate::oracle::stationary::{stationary_table, StationaryInfo};
use crate::policy::ParamPolicy;

/// Exact average value, differential value, action value and advantage of
/// one signal under one policy.
#[derive(Clone, Debug, Serialize)]
pub struct ValueBundle {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    /// `[s][a]`
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    /// `[s][a]`
    #[serde(rename = "A")]
    pub adv: Vec<Vec<f64>>,
}

pub const RESIDUAL_TOL: f64 = 1e-8;

/// Values for an explicit policy table, given its stationary information.
///
/// `V` is centered so that `sum_s d(s) V(s) = 0`. The bounds `|V| <= 5 tau`
/// and `|Q| <= 6 tau` are checked on every call.
pub fn values_for_table(
    cmdp: &TabularCmdp,
    probs: &[Vec<f64>],
    info: &StationaryInfo,
    which: Signal,
) -> Result<ValueBundle> {
    let (n, m) = (cmdp.n_states(), cmdp.n_actions());
    let k = cmdp.induced_kernel(probs);
    let g_pi: Vec<f64> = (0..n)
        .map(|s| (0..m).map(|a| probs[s][a] * cmdp.signal(which, s, a)).sum())
        .collect();
    let j: f64 = info.d_pi.iter().zip(&g_pi).map(|(d, g)| d * g).sum();

    // (I - P + 1 d^T) V = g_pi - J has the unique solution with d^T V = 0.
    let mut sys = Mat::identity(n, n) - &k;
    for r in 0..n {
        for c in 0..n {
            sys[(r, c)] += info.d_pi[c];
        }
    }
    let rhs = Vector::from_iterator(n, g_pi.iter().map(|g| g - j));
    let v = solve_checked(&sys, &rhs, 1e-13)
        .map_err(|e| Error::numeric(format!("Poisson system: {e}")))?;
    let poisson = (&v - &k * &v - &rhs).amax();
    if poisson > RESIDUAL_TOL {
        return Err(Error::numeric(format!("Poisson residual {poisson:.3e}")));
    }

    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..m)
                .map(|a| {
                    let next: f64 = cmdp.next_dist(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum();
                    cmdp.signal(which, s, a) - j + next
                })
                .collect()
        })
        .collect();
    let adv = (0..n).map(|s| q[s].iter().map(|x| x - v[s]).collect()).collect();
    let bundle = ValueBundle { j, v: v.iter().cloned().collect(), q, adv };
    check_value_bounds(&bundle, info.mixing_time)?;
    Ok(bundle)
}

pub fn check_value_bounds(bundle: &ValueBundle, mixing_time: usize) -> Result<()> {
    let tau = mixing_time as f64;
    let v_max = bundle.v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let q_max = bundle.q.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if v_max > 5.0 * tau || q_max > 6.0 * tau {
        return Err(Error::numeric(format!(
            "value bound violated: max|V| = {v_max:.4}, max|Q| = {q_max:.4}, tau_mix = {mixing_time}"
        )));
    }
    Ok(())
}

/// Largest Bellman residual `|Q - (g - J + P V)|` of a bundle.
pub fn bellman_residual(cmdp: &TabularCmdp, bundle: &ValueBundle, which: Signal) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..cmdp.n_states() {
        for a in 0..cmdp.n_actions() {
            let next: f64 = cmdp.next_dist(s, a).iter().zip(&bundle.v).map(|(p, x)| p * x).sum();
            let target = cmdp.signal(which, s, a) - bundle.j + next;
            worst = worst.max((bundle.q[s][a] - target).abs());
        }
    }
    worst
}

pub fn exact_values(cmdp: &TabularCmdp, policy: &ParamPolicy, which: Signal) -> Result<ValueBundle> {
    policy.check_compatible(cmdp)?;
    let probs = policy.probs_table()?;
    let info = stationary_table(cmdp, &probs)?;
    values_for_table(cmdp, &probs, &info, which)
}

/// Both signals with a single stationary computation.
pub fn exact_values_pair(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
) -> Result<(StationaryInfo, ValueBundle, ValueBundle)> {
    policy.check_compatible(cmdp)?;
    let probs = policy.probs_table()?;
    let info = stationary_table(cmdp, &probs)?;
    let r = values_for_table(cmdp, &probs, &info, Signal::Reward)?;
    let c = values_for_table(cmdp, &probs, &info, Signal::Cost)?;
    Ok((info, r, c))
}

/// `J_g` of an explicit policy table (stationary solve only).
pub fn average_value(cmdp: &TabularCmdp, probs: &[Vec<f64>], which: Signal) -> Result<f64> {
    let d = crate::oracle::stationary::stationary_dist(cmdp, probs)?;
    Ok((0..cmdp.n_states())
        .map(|s| {
            d[s] * (0..cmdp.n_actions()).map(|a| probs[s][a] * cmdp.signal(which, s, a)).sum::<f64>()
        })
        .sum())
}
