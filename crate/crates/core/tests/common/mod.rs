#![allow(dead_code)]

use pdnac_core::linalg::Vector;
use pdnac_core::rng;
use pdnac_core::{ParamPolicy, TabularCmdp};
use rand_distr::{Distribution, Normal};

pub fn random_theta(dim: usize, scale: f64, seed: u64) -> Vector {
    let mut r = rng::stream(seed, &[4242]);
    let n = Normal::new(0.0, scale).unwrap();
    Vector::from_fn(dim, |_, _| n.sample(&mut r))
}

pub fn random_tabular(cmdp: &TabularCmdp, scale: f64, seed: u64) -> ParamPolicy {
    let p = ParamPolicy::tabular(cmdp.n_states(), cmdp.n_actions());
    p.with_theta(random_theta(p.dim(), scale, seed)).unwrap()
}

/// One state, `rewards.len()` actions, zero cost.
pub fn single_state(rewards: &[f64]) -> TabularCmdp {
    let m = rewards.len();
    TabularCmdp::new(1, m, vec![1.0; m], rewards.to_vec(), vec![0.0; m], vec![1.0]).unwrap()
}

pub fn deterministic_table(n_states: usize, n_actions: usize, actions: &[usize]) -> Vec<Vec<f64>> {
    (0..n_states)
        .map(|s| (0..n_actions).map(|a| if a == actions[s] { 1.0 } else { 0.0 }).collect())
        .collect()
}
