use serde::Serialize;

use crate::cmdp::{check_policy_chain, TabularCmdp};
use crate::error::{Error, Result};
use crate::linalg::{solve_checked, Mat, Vector};

/// Explicit action probabilities `probs[s][a]`.
pub type PolicyTable = Vec<Vec<f64>>;

/// Cap on the number of matrix powers tried when measuring the mixing time.
pub const MIXING_TIME_CAP: usize = 1_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct StationaryInfo {
    /// `d^pi` over states.
    pub d_pi: Vec<f64>,
    /// `nu^pi(s, a) = d^pi(s) pi(a|s)`, row-major `[s][a]`.
    pub nu_pi: Vec<Vec<f64>>,
    /// `min { t >= 1 : max_s TV(P^t(s, .), d^pi) <= 1/4 }`.
    pub mixing_time: usize,
    /// `1 - |lambda_2(P^pi)|`.
    pub spectral_gap: f64,
}

/// Stationary distribution of an ergodic kernel.
pub fn stationary_of_kernel(k: &Mat) -> Result<Vector> {
    let n = k.nrows();
    // (P^T - I) d = 0 with the last equation replaced by sum(d) = 1.
    let mut a = k.transpose() - Mat::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(n);
    rhs[n - 1] = 1.0;
    let d = solve_checked(&a, &rhs, 1e-13)
        .map_err(|e| Error::Ergodicity(format!("stationary distribution not unique: {e}")))?;
    let residual = (k.transpose() * &d - &d).amax();
    if residual > 1e-10 {
        return Err(Error::numeric(format!("stationary residual {residual:.3e}")));
    }
    Ok(d)
}

/// Total-variation distance `1/2 ||p - q||_1`.
pub fn total_variation(p: impl Iterator<Item = f64>, q: &[f64]) -> f64 {
    0.5 * p.zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn mixing_time_of_kernel(k: &Mat, d: &[f64], cap: usize) -> Result<usize> {
    let mut power = k.clone();
    for t in 1..=cap {
        let worst = power
            .row_iter()
            .map(|row| total_variation(row.iter().cloned(), d))
            .fold(0.0, f64::max);
        if worst <= 0.25 {
            return Ok(t);
        }
        power = &power * k;
    }
    Err(Error::Ergodicity(format!(
        "mixing time exceeds {cap} steps (chain is nearly reducible)"
    )))
}

pub fn spectral_gap(k: &Mat) -> f64 {
    let mut moduli: Vec<f64> = k.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    1.0 - moduli.get(1).copied().unwrap_or(0.0)
}

pub(crate) fn ergodic_kernel(cmdp: &TabularCmdp, probs: &[Vec<f64>]) -> Result<Mat> {
    if let Some(reason) = check_policy_chain(cmdp, probs) {
        return Err(Error::Ergodicity(format!("induced chain is {reason}")));
    }
    Ok(cmdp.induced_kernel(probs))
}

/// `d^pi` only (no mixing-time computation).
pub fn stationary_dist(cmdp: &TabularCmdp, probs: &[Vec<f64>]) -> Result<Vector> {
    stationary_of_kernel(&ergodic_kernel(cmdp, probs)?)
}

pub fn stationary_table(cmdp: &TabularCmdp, probs: &[Vec<f64>]) -> Result<StationaryInfo> {
    let k = ergodic_kernel(cmdp, probs)?;
    let d = stationary_of_kernel(&k)?;
    let d_pi: Vec<f64> = d.iter().cloned().collect();
    let nu_pi = probs
        .iter()
        .zip(&d_pi)
        .map(|(row, ds)| row.iter().map(|p| ds * p).collect())
        .collect();
    Ok(StationaryInfo {
        mixing_time: mixing_time_of_kernel(&k, &d_pi, MIXING_TIME_CAP)?,
        spectral_gap: spectral_gap(&k),
        d_pi,
        nu_pi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(rows: &[&[f64]]) -> Mat {
        Mat::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn two_state_closed_form() {
        // d = (q/(p+q), p/(p+q)) with p = 0.1, q = 0.2.
        let k = kernel(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let d = stationary_of_kernel(&k).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-14);
        // Second eigenvalue 1 - p - q = 0.7.
        assert!((spectral_gap(&k) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rank_one_chain_mixes_in_one_step() {
        let mu = [0.1, 0.6, 0.3];
        let k = kernel(&[&mu, &mu, &mu]);
        let d = stationary_of_kernel(&k).unwrap();
        let d: Vec<f64> = d.iter().cloned().collect();
        assert_eq!(mixing_time_of_kernel(&k, &d, 10).unwrap(), 1);
    }

    #[test]
    fn uniform_rows_on_four_states() {
        let row = [0.25; 4];
        let k = kernel(&[&row, &row, &row, &row]);
        let d = stationary_of_kernel(&k).unwrap();
        assert!(d.iter().all(|x| (x - 0.25).abs() < 1e-14));
        let d: Vec<f64> = d.iter().cloned().collect();
        assert_eq!(mixing_time_of_kernel(&k, &d, 10).unwrap(), 1);
    }

    #[test]
    fn slow_chain_hits_cap() {
        let eps = 1e-4;
        let k = kernel(&[&[1.0 - eps, eps], &[eps, 1.0 - eps]]);
        let d = [0.5, 0.5];
        assert!(mixing_time_of_kernel(&k, &d, 100).is_err());
        let t = mixing_time_of_kernel(&k, &d, 100_000).unwrap();
        // TV(t) = 0.5 (1 - 2 eps)^t, so t = ceil(ln(0.5) / ln(1 - 2 eps)).
        let expected = ((0.5f64).ln() / (1.0 - 2.0 * eps).ln()).ceil() as usize;
        assert_eq!(t, expected);
    }
}
