mod common;

use common::*;
use pdnac_core::actor::ActorConfig;
use pdnac_core::critic::CriticConfig;
use pdnac_core::driver::*;
use pdnac_core::features::FeatureMap;
use pdnac_core::linalg::Vector;
use pdnac_core::mlmc::{MlmcConfig, MlmcCostReport};
use pdnac_core::oracle::*;
use pdnac_core::telemetry::{ActorRow, CriticRow, NullSink, TelemetrySink};
use pdnac_core::{ParamPolicy, Signal, TabularCmdp};
use proptest::prelude::*;

#[derive(Default)]
struct Recorder {
    thetas: Vec<Vector>,
    critic_samples: Vec<usize>,
    actor_samples: Vec<usize>,
}

impl TelemetrySink for Recorder {
    fn wants_inner(&self) -> bool {
        true
    }

    fn critic(&mut self, row: &CriticRow) {
        if row.which == Signal::Reward {
            self.critic_samples.push(row.samples);
        }
    }

    fn actor(&mut self, row: &ActorRow) {
        if row.which == Signal::Reward {
            self.actor_samples.push(row.samples);
        }
    }
}

impl RunSink for Recorder {
    fn policy(&mut self, _k: usize, theta: &Vector) {
        self.thetas.push(theta.clone());
    }
}

fn config(k_epochs: usize, h: usize, t_max: usize, beta: f64, delta: f64) -> PdConfig {
    let mlmc = MlmcConfig::new(t_max).unwrap();
    PdConfig {
        k_epochs,
        alpha: 0.1,
        beta,
        delta,
        critic: CriticConfig { c_gamma: 4.0, gamma_xi: 0.05, h_inner: h, mlmc, lambda_hat: None },
        actor: ActorConfig { gamma_omega: 0.1, h_inner: h, mlmc, mu_ridge: 1e-6 },
    }
}

fn benchmark_run(seed: u64, k_epochs: usize, sink: &mut dyn RunSink) -> RunOutput {
    let cmdp = TabularCmdp::benchmark();
    let oracle = OracleAttachment::new(&cmdp).unwrap();
    let features = FeatureMap::anchored_one_hot(2, 1).unwrap();
    let policy0 = ParamPolicy::tabular(2, 2);
    let delta = oracle.lp.slater_margin;
    let inputs = RunInputs { cmdp: &cmdp, policy0: &policy0, features_r: &features, features_c: &features, seed, oracle: Some(&oracle) };
    run_pdnac(&inputs, &config(k_epochs, 32, 64, 0.05, delta), sink).unwrap()
}

#[test]
fn zero_epochs_is_a_no_op() {
    let cmdp = TabularCmdp::benchmark();
    let features = FeatureMap::anchored_one_hot(2, 1).unwrap();
    let policy0 = ParamPolicy::tabular(2, 2).with_theta(Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4])).unwrap();
    let inputs = RunInputs { cmdp: &cmdp, policy0: &policy0, features_r: &features, features_c: &features, seed: 0, oracle: None };
    let out = run_pdnac(&inputs, &config(0, 8, 8, 0.1, 0.5), &mut NullSink).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.final_policy.theta(), policy0.theta());
    assert_eq!(out.summary.total_samples, 0);
    assert!(out.summary.avg_gap.is_none());
}

#[test]
fn never_violated_constraint_keeps_the_multiplier_at_zero() {
    let base = TabularCmdp::random_ergodic(3, 2, 5, 0.3).unwrap();
    let cmdp = base.with_signal(Signal::Cost, vec![1.0; 6]).unwrap();
    let features = FeatureMap::anchored_one_hot(3, 2).unwrap();
    let policy0 = ParamPolicy::tabular(3, 2);
    for seed in 0..20 {
        let inputs = RunInputs { cmdp: &cmdp, policy0: &policy0, features_r: &features, features_c: &features, seed, oracle: None };
        let out = run_pdnac(&inputs, &config(30, 16, 16, 0.1, 0.5), &mut NullSink).unwrap();
        assert!(out.records.iter().all(|r| r.lambda == 0.0));
        assert_eq!(out.summary.final_lambda, 0.0);
    }
}

#[test]
fn exact_ascent_step_does_not_decrease_the_lagrangian() {
    let cmdp = TabularCmdp::random_ergodic(4, 2, 6, 0.3).unwrap();
    let alpha = 1e-3;
    for seed in 0..5 {
        let policy = random_tabular(&cmdp, 0.5, seed);
        for lambda in [0.0, 0.5, 2.0] {
            let w = exact_npg(&cmdp, &policy, Signal::Reward, 1e-6).unwrap()
                + exact_npg(&cmdp, &policy, Signal::Cost, 1e-6).unwrap() * lambda;
            let next = policy.with_theta(primal_update(policy.theta(), alpha, &w).unwrap()).unwrap();
            let before = lagrangian(&cmdp, &policy, lambda).unwrap();
            let after = lagrangian(&cmdp, &next, lambda).unwrap();
            assert!(after >= before - alpha * alpha * (1.0 + w.norm_squared()), "{before} -> {after}");
        }
    }
}

#[test]
fn epoch_averages_equal_the_mixture_policy_values() {
    let cmdp = TabularCmdp::benchmark();
    let mut rec = Recorder::default();
    let out = benchmark_run(3, 40, &mut rec);
    assert_eq!(rec.thetas.len(), 40);
    let tables: Vec<_> = rec
        .thetas
        .iter()
        .map(|t| ParamPolicy::tabular(2, 2).with_theta(t.clone()).unwrap().probs_table().unwrap())
        .collect();
    let mix = mixture_policy(&cmdp, &tables).unwrap();
    let s = &out.summary;
    assert!((average_value(&cmdp, &mix, Signal::Reward).unwrap() - s.avg_j_r.unwrap()).abs() < 1e-12);
    assert!((average_value(&cmdp, &mix, Signal::Cost).unwrap() - s.avg_j_c.unwrap()).abs() < 1e-12);
}

#[test]
fn violation_extraction_bounds_the_averaged_violation() {
    let cmdp = TabularCmdp::benchmark();
    let lp = solve_cmdp_lp(&cmdp).unwrap();
    for seed in 0..5 {
        let out = benchmark_run(seed, 60, &mut NullSink);
        let (zeta, bound) = violation_extraction(&out.summary, lp.slater_margin).unwrap();
        assert!((bound - lp.slater_margin * zeta).abs() < 1e-12);
        assert!((-out.summary.avg_j_c.unwrap()).max(0.0) <= bound + 1e-12);
    }
}

#[test]
fn sample_accounting_matches_the_mlmc_draws() {
    let mut rec = Recorder::default();
    let out = benchmark_run(1, 50, &mut rec);
    let draws: Vec<usize> = rec.critic_samples.iter().chain(&rec.actor_samples).cloned().collect();
    assert_eq!(draws.len(), 2 * 50 * 32);
    assert_eq!(draws.iter().sum::<usize>() as u64, out.summary.total_samples);
    assert_eq!(out.records.last().unwrap().samples_so_far, out.summary.total_samples);
    let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
    let (lo, hi) = MlmcCostReport::band(64);
    assert!(mean >= lo && mean <= hi, "{mean}");
    let expected = MlmcConfig::new(64).unwrap().expected_traj_len();
    assert!((out.summary.total_samples as f64) <= 4.0 * 50.0 * 32.0 * expected * 1.1);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let a = benchmark_run(9, 30, &mut NullSink);
    let b = benchmark_run(9, 30, &mut NullSink);
    assert_eq!(serde_json::to_string(&a.records).unwrap(), serde_json::to_string(&b.records).unwrap());
    let c = benchmark_run(10, 30, &mut NullSink);
    assert_ne!(a.records, c.records);
}

#[test]
fn infeasible_instance_fails_before_running() {
    let cmdp = TabularCmdp::random_ergodic(3, 2, 1, 0.5).unwrap().with_signal(Signal::Cost, vec![-0.5; 6]).unwrap();
    assert!(matches!(OracleAttachment::new(&cmdp), Err(pdnac_core::Error::Infeasible(_))));
}

#[test]
fn schedule_step_sizes() {
    let p = schedule_params(1 << 16, &Schedule::KnownMixing { tau_mix: 1.0, h_const: 0.25 }).unwrap();
    assert_eq!(p.h_inner, 64);
    assert_eq!(p.k_epochs, 1024);
    assert_eq!(p.alpha, 2f64.powi(-8));
    let check = step_size_check(1 << 16, 64, 0.25, 4.0, 0.5, 1.0, 1.0, 1 << 16);
    let log_t = 16.0 * 2f64.ln();
    assert!((check.gamma_xi_prescribed - 2.0 * log_t / (0.25 * 64.0)).abs() < 1e-12);
    assert!((check.gamma_omega_prescribed - 2.0 * log_t / (0.5 * 64.0)).abs() < 1e-12);
    assert!((check.gamma_xi_limit - 0.25 / (24.0 * 16.0 * log_t)).abs() < 1e-12);
    assert!(!check.gamma_xi_ok);
    assert!(check.t_max_critic_ok && check.t_max_actor_ok);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dual_iterate_stays_in_the_projection_interval(
        lambda in 0.0f64..4.0, beta in 0.0f64..5.0, eta in -3.0f64..3.0, delta in 0.05f64..0.99,
    ) {
        let lambda = lambda.min(2.0 / delta);
        let next = dual_update(lambda, beta, eta, delta);
        prop_assert!((0.0..=2.0 / delta).contains(&next));
    }

    #[test]
    fn recorded_multipliers_stay_in_range(seed in 0u64..1000) {
        let out = benchmark_run(seed, 10, &mut NullSink);
        let cap = 2.0 / solve_cmdp_lp(&TabularCmdp::benchmark()).unwrap().slater_margin;
        prop_assert!(out.summary.lambda_in_range);
        prop_assert!(out.records.iter().all(|r| (0.0..=cap).contains(&r.lambda)));
    }
}
