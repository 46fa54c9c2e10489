use serde::Serialize;

use crate::cmdp::{Signal, TabularCmdp};
use crate::critic::CriticVec;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{pinv_solve, solve_checked, sym_min_eigenvalue, Mat, Vector};
use crate::oracle::stationary::stationary_table;
use crate::policy::ParamPolicy;

/// Expected critic system `A xi = b` under the stationary law of a policy.
#[derive(Clone, Debug, Serialize)]
pub struct CriticSystem {
    #[serde(skip)]
    pub a: Mat,
    #[serde(skip)]
    pub b: Vector,
    /// Smallest eigenvalue of the symmetric part of `E[phi(s) (phi(s) - phi(s'))^T]`.
    pub lambda_min: f64,
}

#[derive(Clone, Debug)]
pub struct CriticFixpoint {
    pub xi: CriticVec,
    pub lambda_min: f64,
    pub system: CriticSystem,
}

/// Builds `A = E[[c, 0], [phi(s), phi(s)(phi(s) - phi(s'))^T]]` and
/// `b = E[c g, g phi(s)]` by enumerating `(s, a, s')` under `nu x P`.
pub fn critic_system(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
    features: &FeatureMap,
    c_gamma: f64,
    which: Signal,
) -> Result<CriticSystem> {
    policy.check_compatible(cmdp)?;
    critic_system_table(cmdp, &policy.probs_table()?, features, c_gamma, which)
}

/// [`critic_system`] for an explicit policy table.
pub fn critic_system_table(
    cmdp: &TabularCmdp,
    probs: &[Vec<f64>],
    features: &FeatureMap,
    c_gamma: f64,
    which: Signal,
) -> Result<CriticSystem> {
    if features.n_states() != cmdp.n_states() {
        return Err(Error::config(format!(
            "features cover {} states, instance has {}",
            features.n_states(),
            cmdp.n_states()
        )));
    }
    let info = stationary_table(cmdp, probs)?;
    let m = features.dim();
    let mut a = Mat::zeros(m + 1, m + 1);
    let mut b = Vector::zeros(m + 1);
    let mut block = Mat::zeros(m, m);
    a[(0, 0)] = c_gamma;
    for s in 0..cmdp.n_states() {
        let phi = features.phi(s);
        for act in 0..cmdp.n_actions() {
            let w = info.nu_pi[s][act];
            if w == 0.0 {
                continue;
            }
            let g = cmdp.signal(which, s, act);
            b[0] += w * c_gamma * g;
            for i in 0..m {
                a[(i + 1, 0)] += w * phi[i];
                b[i + 1] += w * g * phi[i];
            }
            for (s_next, &p) in cmdp.next_dist(s, act).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let diff = phi - features.phi(s_next);
                block.ger(w * p, &phi, &diff, 1.0);
            }
        }
    }
    a.view_mut((1, 1), (m, m)).copy_from(&block);
    Ok(CriticSystem { a, b, lambda_min: sym_min_eigenvalue(&block) })
}

/// `xi* = A^{-1} b`. A singular `A` means the features admit a direction
/// with `E[phi (phi - phi')^T]` degenerate (for example a constant feature, or
/// a full one-hot basis), or `c_gamma` is too small.
pub fn exact_critic_fixpoint(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
    features: &FeatureMap,
    c_gamma: f64,
    which: Signal,
) -> Result<CriticFixpoint> {
    let system = critic_system(cmdp, policy, features, c_gamma, which)?;
    let xi = solve_checked(&system.a, &system.b, 1e-12).map_err(|e| {
        Error::numeric(format!(
            "critic matrix is singular ({e}); feature covariance lambda_min = {:.3e}, c_gamma = {c_gamma}",
            system.lambda_min
        ))
    })?;
    Ok(CriticFixpoint { xi: CriticVec::from_vector(&xi), lambda_min: system.lambda_min, system })
}

/// Minimum-norm solution of `A xi = b` for singular but consistent systems
/// (a full one-hot basis, where `zeta` is determined only up to a constant).
pub fn exact_critic_fixpoint_min_norm(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
    features: &FeatureMap,
    c_gamma: f64,
    which: Signal,
) -> Result<CriticFixpoint> {
    let system = critic_system(cmdp, policy, features, c_gamma, which)?;
    let xi = pinv_solve(&system.a, &system.b, 1e-9)?;
    Ok(CriticFixpoint { xi: CriticVec::from_vector(&xi), lambda_min: system.lambda_min, system })
}

/// Smallest `c_gamma` that keeps the critic matrix positive definite for a
/// feature covariance constant `lambda`: `lambda + sqrt(1/lambda^2 - 1)`.
pub fn recommended_c_gamma(lambda: f64) -> Result<f64> {
    if lambda.is_infinite() && lambda > 0.0 {
        // No value features: A = [c_gamma], any positive value works.
        return Ok(1.0);
    }
    if !(lambda > 0.0) {
        return Err(Error::numeric(format!(
            "feature covariance constant must be positive, got {lambda:.3e}"
        )));
    }
    Ok(lambda + (1.0 / (lambda * lambda) - 1.0).max(0.0).sqrt())
}
