use pdnac_core::cmdp::Transition;
use pdnac_core::experiments::mlmc_vs_plain;
use pdnac_core::mlmc::{draw_level, mlmc_cost_report, MlmcConfig, MlmcCostReport};
use pdnac_core::oracle::stationary;
use pdnac_core::rng;
use pdnac_core::{ParamPolicy, TabularCmdp};

/// Second moment of the MLMC output divided by `sigma^2 tau log2 t_max`,
/// measured once on the reference chain at `t_max = 2^6` and frozen.
const FROZEN_VARIANCE_CONSTANT: f64 = 0.56;

/// Three-state chain started deterministically in state 0, so short averages
/// are biased away from the stationary mean.
fn reference_chain() -> (TabularCmdp, ParamPolicy) {
    let base = TabularCmdp::random_ergodic(3, 2, 1, 0.1).unwrap();
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|s| (0..2).map(move |a| (s, a))).collect();
    let cmdp = TabularCmdp::new(
        3,
        2,
        pairs.iter().flat_map(|&(s, a)| base.next_dist(s, a).to_vec()).collect(),
        pairs.iter().map(|&(s, a)| base.reward(s, a)).collect(),
        pairs.iter().map(|&(s, a)| base.cost(s, a)).collect(),
        vec![1.0, 0.0, 0.0],
    )
    .unwrap();
    (cmdp, ParamPolicy::tabular(3, 2))
}

fn estimator(z: &Transition, out: &mut [f64]) {
    out[0] = z.reward;
    out[1] = z.cost;
    out[2] = if z.s == 0 { 1.0 } else { 0.0 };
}

/// `E_nu ||estimator(z)||^2` under the stationary occupancy.
fn sigma_sq(cmdp: &TabularCmdp, policy: &ParamPolicy) -> f64 {
    let info = stationary(cmdp, policy).unwrap();
    let mut total = 0.0;
    for s in 0..3 {
        for a in 0..2 {
            let mut out = [0.0; 3];
            estimator(&Transition { s, a, s_next: 0, reward: cmdp.reward(s, a), cost: cmdp.cost(s, a) }, &mut out);
            total += info.nu_pi[s][a] * out.iter().map(|x| x * x).sum::<f64>();
        }
    }
    total
}

#[test]
fn mlmc_mean_matches_top_level_average() {
    let (cmdp, policy) = reference_chain();
    for t_max in [1 << 4, 1 << 6] {
        let cmp = mlmc_vs_plain(&cmdp, &policy, estimator, 3, t_max, 100_000, 11).unwrap();
        assert!(cmp.max_z() <= 3.0, "t_max {t_max}: {cmp:?}");
    }
}

#[test]
fn non_power_of_two_budget_targets_the_lower_level() {
    let (cmdp, policy) = reference_chain();
    let cmp = mlmc_vs_plain(&cmdp, &policy, estimator, 3, 24, 50_000, 12).unwrap();
    assert!(cmp.max_z() <= 3.0, "{cmp:?}");
}

#[test]
fn variance_grows_at_most_logarithmically() {
    let (cmdp, policy) = reference_chain();
    let info = stationary(&cmdp, &policy).unwrap();
    let scale = sigma_sq(&cmdp, &policy) * info.mixing_time as f64;
    for t_max in [1usize << 4, 1 << 6, 1 << 8, 1 << 10] {
        let cmp = mlmc_vs_plain(&cmdp, &policy, estimator, 3, t_max, 20_000, 13).unwrap();
        let c = cmp.mlmc_second_moment / (scale * (t_max as f64).log2());
        assert!(c <= 2.0 * FROZEN_VARIANCE_CONSTANT, "t_max {t_max}: constant {c}");
    }
}

#[test]
fn cost_stays_logarithmic() {
    let mut r = rng::stream(3, &[1]);
    for t_max in [1usize << 6, 1 << 10] {
        let cfg = MlmcConfig::new(t_max).unwrap();
        let report = mlmc_cost_report((0..100_000).map(|_| draw_level(&mut r, &cfg).traj_len)).unwrap();
        assert!(report.within_band(t_max), "{report:?}");
        assert!(report.p99_samples <= t_max);
        assert!((report.mean_samples - cfg.expected_traj_len()).abs() < 0.3);
    }
    let cfg = MlmcConfig::new(1).unwrap();
    let report = mlmc_cost_report((0..1000).map(|_| draw_level(&mut r, &cfg).traj_len)).unwrap();
    assert_eq!(report.mean_samples, 1.0);
    assert_eq!(MlmcCostReport::band(1 << 10), (5.0, 22.0));
}
