use crate::cmdp::{Signal, TabularCmdp};
use crate::error::{Error, Result};
use crate::linalg::{pinv_solve, solve_checked, Mat, Vector};
use crate::oracle::stationary::stationary_table;
use crate::oracle::values::{values_for_table, ValueBundle};
use crate::policy::ParamPolicy;

fn gradient_from(policy: &ParamPolicy, nu: &[Vec<f64>], bundle: &ValueBundle) -> Result<Vector> {
    let mut grad = Vector::zeros(policy.dim());
    let mut score = vec![0.0; policy.dim()];
    for (s, row) in nu.iter().enumerate() {
        let probs = policy.action_probs(s)?;
        for (a, &w) in row.iter().enumerate() {
            policy.score_with_probs(s, a, &probs, &mut score);
            let scale = w * bundle.adv[s][a];
            for (g, x) in grad.iter_mut().zip(&score) {
                *g += scale * x;
            }
        }
    }
    Ok(grad)
}

/// `sum_{s,a} nu(s,a) A_g(s,a) score(s,a)`.
pub fn exact_policy_gradient(cmdp: &TabularCmdp, policy: &ParamPolicy, which: Signal) -> Result<Vector> {
    policy.check_compatible(cmdp)?;
    let probs = policy.probs_table()?;
    let info = stationary_table(cmdp, &probs)?;
    let bundle = values_for_table(cmdp, &probs, &info, which)?;
    gradient_from(policy, &info.nu_pi, &bundle)
}

/// `sum_{s,a} nu(s,a) score score^T`.
pub fn exact_fisher(cmdp: &TabularCmdp, policy: &ParamPolicy) -> Result<Mat> {
    policy.check_compatible(cmdp)?;
    let probs = policy.probs_table()?;
    let info = stationary_table(cmdp, &probs)?;
    fisher_from(policy, &info.nu_pi)
}

fn fisher_from(policy: &ParamPolicy, nu: &[Vec<f64>]) -> Result<Mat> {
    let d = policy.dim();
    let mut f = Mat::zeros(d, d);
    let mut score = vec![0.0; d];
    for (s, row) in nu.iter().enumerate() {
        let probs = policy.action_probs(s)?;
        for (a, &w) in row.iter().enumerate() {
            policy.score_with_probs(s, a, &probs, &mut score);
            let sv = Vector::from_column_slice(&score);
            f.ger(w, &sv, &sv, 1.0);
        }
    }
    Ok(f)
}

/// Solves `(F + mu I) omega = grad J_g`; `mu = 0` gives the minimum-norm
/// solution and rejects inconsistent systems.
pub fn exact_npg(cmdp: &TabularCmdp, policy: &ParamPolicy, which: Signal, mu_ridge: f64) -> Result<Vector> {
    let grad = exact_policy_gradient(cmdp, policy, which)?;
    let fisher = exact_fisher(cmdp, policy)?;
    npg_direction(&fisher, &grad, mu_ridge)
}

pub fn npg_direction(fisher: &Mat, grad: &Vector, mu_ridge: f64) -> Result<Vector> {
    if !(mu_ridge >= 0.0) {
        return Err(Error::config(format!("mu_ridge must be >= 0, got {mu_ridge}")));
    }
    if mu_ridge == 0.0 {
        pinv_solve(fisher, grad, 1e-8)
    } else {
        let d = fisher.nrows();
        solve_checked(&(fisher + Mat::identity(d, d) * mu_ridge), grad, 1e-15)
    }
}

/// `J_r + lambda J_c`.
pub fn lagrangian(cmdp: &TabularCmdp, policy: &ParamPolicy, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("dual variable must be >= 0, got {lambda}")));
    }
    let probs = policy.probs_table()?;
    policy.check_compatible(cmdp)?;
    let jr = crate::oracle::values::average_value(cmdp, &probs, Signal::Reward)?;
    let jc = crate::oracle::values::average_value(cmdp, &probs, Signal::Cost)?;
    Ok(jr + lambda * jc)
}

/// Everything the NPG direction needs for one policy, from one stationary solve.
#[derive(Clone, Debug)]
pub struct NpgBundle {
    pub fisher: Mat,
    pub grad_r: Vector,
    pub grad_c: Vector,
    pub values_r: ValueBundle,
    pub values_c: ValueBundle,
    pub mixing_time: usize,
}

pub fn exact_npg_bundle(cmdp: &TabularCmdp, policy: &ParamPolicy) -> Result<NpgBundle> {
    policy.check_compatible(cmdp)?;
    let probs = policy.probs_table()?;
    let info = stationary_table(cmdp, &probs)?;
    let values_r = values_for_table(cmdp, &probs, &info, Signal::Reward)?;
    let values_c = values_for_table(cmdp, &probs, &info, Signal::Cost)?;
    Ok(NpgBundle {
        fisher: fisher_from(policy, &info.nu_pi)?,
        grad_r: gradient_from(policy, &info.nu_pi, &values_r)?,
        grad_c: gradient_from(policy, &info.nu_pi, &values_c)?,
        values_r,
        values_c,
        mixing_time: info.mixing_time,
    })
}
