//! Monte Carlo check of the stochastic linear recursion bound under four
//! noise regimes on the reference problem.

use pdnac_core::linalg::{Mat, Vector};
use pdnac_core::recursion::{reference_spec, verify_recursion_bound, BoundReport, REGIMES};
use pdnac_core::Result;
use serde::Serialize;

pub const HORIZON: usize = 600;
pub const SLACK: f64 = 10.0;

#[derive(Serialize)]
pub struct RegimeReport {
    pub regime: &'static str,
    pub report: BoundReport,
}

#[derive(Serialize)]
pub struct SelftestReport {
    pub regimes: Vec<RegimeReport>,
    /// `|measured - ||(I - beta P)^H (x0 - x*)||^2|` in the noiseless regime.
    pub noiseless_contraction_error: f64,
    pub pass: bool,
}

pub fn run_selftest(replicas: usize, seed: u64) -> Result<SelftestReport> {
    let x0 = Vector::from_element(5, 1.0);
    let mut regimes = Vec::new();
    let mut noiseless_contraction_error = f64::NAN;
    for regime in REGIMES {
        let spec = reference_spec(regime, HORIZON, 1)?;
        let report = verify_recursion_bound(&spec, &x0, replicas, SLACK, seed)?;
        if regime == "noiseless" {
            let step = Mat::identity(5, 5) - &spec.p * spec.beta;
            let mut e = &x0 - spec.solution()?;
            for _ in 0..HORIZON {
                e = &step * e;
            }
            noiseless_contraction_error = (report.measured - e.norm_squared()).abs();
        }
        regimes.push(RegimeReport { regime, report });
    }
    let pass = regimes.iter().all(|r| r.report.pass) && noiseless_contraction_error <= 1e-10;
    Ok(SelftestReport { regimes, noiseless_contraction_error, pass })
}
