//! Experiment harness for the primal-dual natural actor-critic: configs,
//! sweeps over sample budgets, plots and self-tests.

pub mod config;
pub mod output;
pub mod plot;
pub mod selftest;
pub mod sweep;

use pdnac_core::Error;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Ergodicity(_) | Error::Contract(_) => 2,
        Error::Infeasible(_) => 3,
        Error::Divergence(_) | Error::Numeric(_) => 4,
        Error::Io(_) => 1,
    }
}
