mod common;

use common::*;
use pdnac_core::actor::*;
use pdnac_core::critic::*;
use pdnac_core::experiments::{critic_error_curve, npg_errors, FixedPolicySetup};
use pdnac_core::features::FeatureMap;
use pdnac_core::inner::InnerLoop;
use pdnac_core::linalg::{sym_min_eigenvalue, Mat, Vector};
use pdnac_core::mlmc::MlmcConfig;
use pdnac_core::oracle::*;
use pdnac_core::recursion::{run_recursion, NoiseModel, RecursionSpec};
use pdnac_core::rng;
use pdnac_core::telemetry::{NullSink, VecSink};
use pdnac_core::{ChainCursor, ParamPolicy, Signal, TabularCmdp, Transition};

/// `(transition, nu(s, a) P(s' | s, a))` over every triple.
fn weighted_transitions(cmdp: &TabularCmdp, policy: &ParamPolicy) -> Vec<(Transition, f64)> {
    let info = stationary(cmdp, policy).unwrap();
    let mut out = Vec::new();
    for s in 0..cmdp.n_states() {
        for a in 0..cmdp.n_actions() {
            for s_next in 0..cmdp.n_states() {
                let w = info.nu_pi[s][a] * cmdp.prob(s, a, s_next);
                out.push((Transition { s, a, s_next, reward: cmdp.reward(s, a), cost: cmdp.cost(s, a) }, w));
            }
        }
    }
    out
}

fn critic_cfg(c_gamma: f64, gamma_xi: f64, h_inner: usize, t_max: usize) -> CriticConfig {
    CriticConfig { c_gamma, gamma_xi, h_inner, mlmc: MlmcConfig::new(t_max).unwrap(), lambda_hat: None }
}

fn run_single_critic(cmdp: &TabularCmdp, policy: &ParamPolicy, features: &FeatureMap, cfg: &CriticConfig, seed: u64) -> CriticVec {
    let mut r = rng::stream(seed, &[1]);
    let mut cursor = ChainCursor::from_initial(cmdp, &mut r);
    let mut ctx = InnerLoop { cmdp, policy, cursor: &mut cursor, rng: &mut r, epoch: 0, sink: &mut NullSink };
    run_critic(&mut ctx, cfg, &[CriticJob { which: Signal::Reward, features, target: None }]).unwrap().remove(0)
}

#[test]
fn average_tracker_converges_on_a_single_state() {
    let cmdp = single_state(&[0.4]);
    let policy = ParamPolicy::tabular(1, 1);
    let xi = run_single_critic(&cmdp, &policy, &FeatureMap::empty(1), &critic_cfg(1.0, 0.5, 50, 16), 0);
    assert_eq!(xi.m(), 0);
    assert!((xi.eta - 0.4).abs() < 1e-6);
}

#[test]
fn zero_step_leaves_the_critic_at_zero() {
    let cmdp = TabularCmdp::random_ergodic(4, 2, 1, 0.3).unwrap();
    let policy = random_tabular(&cmdp, 0.5, 1);
    let xi = run_single_critic(&cmdp, &policy, &FeatureMap::one_hot(4), &critic_cfg(2.0, 0.0, 20, 16), 0);
    assert_eq!(xi, CriticVec::zeros(4));
}

#[test]
fn expected_critic_step_vanishes_at_the_fixed_point() {
    for seed in 0..5 {
        let cmdp = TabularCmdp::random_ergodic(5, 3, seed, 0.3).unwrap();
        let policy = random_tabular(&cmdp, 0.7, seed);
        let features = FeatureMap::anchored_one_hot(5, 2).unwrap();
        for which in Signal::BOTH {
            let fp = exact_critic_fixpoint(&cmdp, &policy, &features, 3.0, which).unwrap();
            let mut avg = vec![0.0; 5];
            let mut out = vec![0.0; 5];
            for (z, w) in weighted_transitions(&cmdp, &policy) {
                critic_sample_grad(&fp.xi, &z, z.value(which), &features, 3.0, &mut out);
                avg.iter_mut().zip(&out).for_each(|(a, o)| *a += w * o);
            }
            assert!(avg.iter().all(|x| x.abs() <= 1e-8), "{avg:?}");
        }
    }
}

#[test]
fn sampled_critic_matrix_is_coercive_for_compliant_c_gamma() {
    let setup = FixedPolicySetup::random(5, 2, 7, 0.2, 0.5, Signal::Reward).unwrap();
    let mut r = rng::stream(4, &[1]);
    let mut cursor = ChainCursor::from_initial(&setup.cmdp, &mut r);
    let traj = pdnac_core::cmdp::sample_trajectory(&setup.cmdp, &setup.policy, &mut cursor, 20_000, &mut r).unwrap();
    let n = 1 + setup.features.dim();
    // A(z) xi is the sample gradient with the signal zeroed; build A_hat column by column.
    let mut a_hat = Mat::zeros(n, n);
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = 1.0;
        let xi = CriticVec::from_vector(&e);
        for z in &traj {
            critic_sample_grad(&xi, z, 0.0, &setup.features, setup.c_gamma, &mut out);
            for i in 0..n {
                a_hat[(i, j)] += out[i] / traj.len() as f64;
            }
        }
    }
    let min_form = sym_min_eigenvalue(&a_hat);
    assert!(min_form >= setup.lambda_hat / 4.0, "{min_form} vs {}", setup.lambda_hat);
    let exact = critic_system(&setup.cmdp, &setup.policy, &setup.features, setup.c_gamma, Signal::Reward).unwrap();
    assert!(sym_min_eigenvalue(&exact.a) >= setup.lambda_hat / 2.0 - 1e-12);
}

#[test]
fn average_tracker_matches_the_average_value() {
    let setup = FixedPolicySetup::random(5, 2, 7, 0.2, 0.5, Signal::Reward).unwrap();
    let j = exact_values(&setup.cmdp, &setup.policy, Signal::Reward).unwrap().j;
    assert!((setup.xi_star.eta - j).abs() < 1e-10);
    let cfg = critic_cfg(setup.c_gamma, 0.003, 1024, 256);
    let etas: Vec<f64> = (0..10).map(|s| run_single_critic(&setup.cmdp, &setup.policy, &setup.features, &cfg, s).eta).collect();
    let mean = etas.iter().sum::<f64>() / 10.0;
    assert!((mean - j).abs() < 0.05, "mean eta {mean} vs J {j}");
}

#[test]
fn critic_error_decreases_with_the_horizon() {
    let setup = FixedPolicySetup::random(5, 2, 7, 0.2, 0.5, Signal::Reward).unwrap();
    let curve = critic_error_curve(&setup, 0.003, &[16, 64, 256], 256, 0..20).unwrap();
    let e = &curve.median_err_sq;
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    assert!(e[2] < curve.xi_star_norm_sq);
}

#[test]
fn telemetry_reports_distance_to_target() {
    let setup = FixedPolicySetup::random(5, 2, 7, 0.2, 0.5, Signal::Reward).unwrap();
    let cfg = critic_cfg(setup.c_gamma, 0.003, 8, 16);
    let mut r = rng::stream(0, &[1]);
    let mut cursor = ChainCursor::from_initial(&setup.cmdp, &mut r);
    let mut sink = VecSink::default();
    let mut ctx = InnerLoop { cmdp: &setup.cmdp, policy: &setup.policy, cursor: &mut cursor, rng: &mut r, epoch: 3, sink: &mut sink };
    let jobs = [CriticJob { which: Signal::Reward, features: &setup.features, target: Some(&setup.xi_star) }];
    let xi = run_critic(&mut ctx, &cfg, &jobs).unwrap().remove(0);
    assert_eq!(sink.critic.len(), 8);
    let last = sink.critic.last().unwrap();
    assert_eq!((last.k, last.h), (3, 7));
    assert!((last.err_to_oracle.unwrap() - xi.dist_sq(&setup.xi_star).sqrt()).abs() < 1e-14);
    let total: usize = sink.critic.iter().map(|row| row.samples).sum();
    assert_eq!(total as u64, cursor.steps());
}

#[test]
fn runaway_critic_is_a_divergence_error() {
    let setup = FixedPolicySetup::random(5, 2, 7, 0.2, 0.5, Signal::Reward).unwrap();
    let cfg = CriticConfig { lambda_hat: Some(setup.lambda_hat), ..critic_cfg(setup.c_gamma, 5.0, 200, 16) };
    let mut r = rng::stream(0, &[1]);
    let mut cursor = ChainCursor::from_initial(&setup.cmdp, &mut r);
    let mut ctx = InnerLoop { cmdp: &setup.cmdp, policy: &setup.policy, cursor: &mut cursor, rng: &mut r, epoch: 0, sink: &mut NullSink };
    let err = run_critic(&mut ctx, &cfg, &[CriticJob { which: Signal::Reward, features: &setup.features, target: None }]);
    assert!(matches!(err, Err(pdnac_core::Error::Divergence(_))));
}

#[test]
fn zero_step_leaves_omega_at_zero() {
    let cmdp = TabularCmdp::random_ergodic(3, 2, 2, 0.3).unwrap();
    let policy = random_tabular(&cmdp, 0.5, 2);
    let features = FeatureMap::anchored_one_hot(3, 0).unwrap();
    let xi = CriticVec { eta: 0.3, zeta: vec![0.1, -0.2] };
    let cfg = ActorConfig { gamma_omega: 0.0, h_inner: 16, mlmc: MlmcConfig::new(16).unwrap(), mu_ridge: 1e-3 };
    let mut r = rng::stream(0, &[1]);
    let mut cursor = ChainCursor::from_initial(&cmdp, &mut r);
    let mut ctx = InnerLoop { cmdp: &cmdp, policy: &policy, cursor: &mut cursor, rng: &mut r, epoch: 0, sink: &mut NullSink };
    let w = run_npg(&mut ctx, &cfg, &[ActorJob { which: Signal::Cost, xi: &xi, features: &features, target: None }]).unwrap();
    assert_eq!(w[0], Vector::zeros(6));
}

#[test]
fn expected_npg_step_is_the_exact_residual() {
    let mu = 1e-3;
    for seed in 0..4 {
        let cmdp = TabularCmdp::random_ergodic(4, 3, seed, 0.3).unwrap();
        let policy = random_tabular(&cmdp, 0.6, seed);
        let features = FeatureMap::one_hot(4);
        let f = exact_fisher(&cmdp, &policy).unwrap() + Mat::identity(12, 12) * mu;
        for which in Signal::BOTH {
            let xi = exact_critic_fixpoint_min_norm(&cmdp, &policy, &features, 2.0, which).unwrap().xi;
            let grad = exact_policy_gradient(&cmdp, &policy, which).unwrap();
            let omega = random_theta(12, 1.0, 7 + seed);
            let mut avg = Vector::zeros(12);
            for (z, w) in weighted_transitions(&cmdp, &policy) {
                avg += npg_sample_grad(omega.as_slice(), &z, &xi, &policy, &features, which, mu).unwrap() * w;
            }
            assert!((avg - (&f * &omega - &grad)).amax() <= 1e-8);
        }
    }
}

#[test]
fn noiseless_surrogate_contracts_at_the_ridge_rate() {
    let mu = 1e-3;
    let gamma = 0.5;
    let cmdp = TabularCmdp::random_ergodic(5, 2, 3, 0.2).unwrap();
    let policy = random_tabular(&cmdp, 0.5, 3);
    let p = exact_fisher(&cmdp, &policy).unwrap() + Mat::identity(10, 10) * mu;
    let q = exact_policy_gradient(&cmdp, &policy, Signal::Reward).unwrap();
    let omega_star = exact_npg(&cmdp, &policy, Signal::Reward, mu).unwrap();
    let spec = RecursionSpec { p, q, noise: NoiseModel::default(), beta: gamma, horizon: 200, admissibility_checks: false };
    let xs = run_recursion(&spec, &Vector::zeros(10), 0).unwrap();
    let bound = (1.0 - gamma * mu).powi(200) * omega_star.norm();
    assert!((xs.last().unwrap() - &omega_star).norm() <= bound);
}

#[test]
fn npg_with_exact_critic_reaches_the_target() {
    let setup = FixedPolicySetup::random(5, 2, 7, 0.2, 0.5, Signal::Reward).unwrap();
    let errs = npg_errors(&setup, 0.1, 0.003, 256, 256, 1e-6, 0..20).unwrap();
    assert!(errs.median_exact_xi <= 0.1 * errs.omega_star_norm_sq, "{errs:?}");
    assert!(errs.median_estimated_xi <= 3.0 * errs.median_exact_xi, "{errs:?}");
}

#[test]
fn critic_error_propagates_monotonically_into_the_npg_bias() {
    let mu = 0.05;
    let cmdp = TabularCmdp::random_ergodic(5, 2, 4, 0.3).unwrap();
    let policy = random_tabular(&cmdp, 0.5, 4);
    let features = FeatureMap::anchored_one_hot(5, 4).unwrap();
    let xi_star = exact_critic_fixpoint(&cmdp, &policy, &features, 10.0, Signal::Reward).unwrap().xi;
    let omega_star = exact_npg(&cmdp, &policy, Signal::Reward, mu).unwrap();
    let direction = random_theta(5, 1.0, 4).normalize();
    let f = exact_fisher(&cmdp, &policy).unwrap() + Mat::identity(10, 10) * mu;
    let transitions = weighted_transitions(&cmdp, &policy);
    let cfg = ActorConfig { gamma_omega: 0.05, h_inner: 4096, mlmc: MlmcConfig::new(64).unwrap(), mu_ridge: mu };
    let mut exact_bias = Vec::new();
    // Trajectories do not depend on the critic, so every corruption level sees
    // the same chains and the shift of the mean isolates the propagated bias.
    let mut means = Vec::new();
    for eps in [0.0, 0.1, 0.3] {
        let xi = CriticVec::from_vector(&(xi_star.to_vector() + &direction * eps));
        // Fixed point of the expected NPG step under the corrupted critic.
        let mut rhs = Vector::zeros(10);
        for (z, w) in &transitions {
            rhs -= npg_sample_grad(&[0.0; 10], z, &xi, &policy, &features, Signal::Reward, mu).unwrap() * *w;
        }
        let fixed = f.clone().lu().solve(&rhs).unwrap();
        exact_bias.push((fixed - &omega_star).norm());
        let mut mean = Vector::zeros(10);
        for seed in 0..100 {
            let mut r = rng::stream(seed, &[2]);
            let mut cursor = ChainCursor::from_initial(&cmdp, &mut r);
            let mut ctx = InnerLoop { cmdp: &cmdp, policy: &policy, cursor: &mut cursor, rng: &mut r, epoch: 0, sink: &mut NullSink };
            let jobs = [ActorJob { which: Signal::Reward, xi: &xi, features: &features, target: None }];
            mean += &run_npg(&mut ctx, &cfg, &jobs).unwrap()[0] / 100.0;
        }
        means.push(mean);
    }
    let sampled_bias: Vec<f64> = means.iter().map(|m| (m - &means[0]).norm()).collect();
    assert!(exact_bias[0] < 1e-8);
    assert!(exact_bias[0] < exact_bias[1] && exact_bias[1] < exact_bias[2], "{exact_bias:?}");
    assert!(sampled_bias[0] < sampled_bias[1] && sampled_bias[1] < sampled_bias[2], "{sampled_bias:?}");
    for i in 1..3 {
        assert!((sampled_bias[i] / exact_bias[i] - 1.0).abs() < 0.25, "{sampled_bias:?} vs {exact_bias:?}");
    }
}

#[test]
fn combined_direction_is_the_lagrangian_npg() {
    let mu = 1e-4;
    let cmdp = TabularCmdp::random_ergodic(4, 3, 8, 0.3).unwrap();
    let policy = random_tabular(&cmdp, 0.5, 8);
    let f = exact_fisher(&cmdp, &policy).unwrap() + Mat::identity(12, 12) * mu;
    let w_r = exact_npg(&cmdp, &policy, Signal::Reward, mu).unwrap();
    let w_c = exact_npg(&cmdp, &policy, Signal::Cost, mu).unwrap();
    for lambda in [0.0, 0.7, 3.0] {
        let grad_l = exact_policy_gradient(&cmdp, &policy, Signal::Reward).unwrap()
            + exact_policy_gradient(&cmdp, &policy, Signal::Cost).unwrap() * lambda;
        let direct = f.clone().lu().solve(&grad_l).unwrap();
        assert!((&w_r + &w_c * lambda - direct).amax() <= 1e-8);
    }
}
