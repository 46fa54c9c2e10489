//! Fixed-policy inner-loop experiments: critic and NPG errors against the
//! exact fixed points, medians over seeds.

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::actor::{run_npg, ActorConfig, ActorJob};
use crate::cmdp::{ChainCursor, Signal, TabularCmdp};
use crate::critic::{run_critic, CriticConfig, CriticJob, CriticVec};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::inner::InnerLoop;
use crate::linalg::Vector;
use crate::mlmc::MlmcConfig;
use crate::oracle::{critic_system, exact_critic_fixpoint, exact_npg, recommended_c_gamma};
use crate::policy::ParamPolicy;
use crate::rng;
use crate::summary::median;
use crate::telemetry::NullSink;

/// Tag for the random policy parameters of a fixed-policy setup.
const THETA_TAG: u64 = 99;
/// Tag for the per-seed chains of an inner-loop experiment.
const EXPERIMENT_TAG: u64 = 8;

/// A random ergodic instance with a frozen random softmax policy and the
/// exact critic fixed point for one signal.
#[derive(Clone, Debug)]
pub struct FixedPolicySetup {
    pub cmdp: TabularCmdp,
    pub policy: ParamPolicy,
    pub features: FeatureMap,
    pub which: Signal,
    pub lambda_hat: f64,
    pub c_gamma: f64,
    pub xi_star: CriticVec,
}

impl FixedPolicySetup {
    /// `theta ~ N(0, theta_scale^2)` per coordinate; anchored one-hot
    /// features pinned at the last state.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        instance: u64,
        smoothing: f64,
        theta_scale: f64,
        which: Signal,
    ) -> Result<Self> {
        let cmdp = TabularCmdp::random_ergodic(n_states, n_actions, instance, smoothing)?;
        let mut r = rng::stream(instance, &[THETA_TAG]);
        let normal = Normal::new(0.0, theta_scale).map_err(|e| Error::config(e.to_string()))?;
        let theta = Vector::from_fn(n_states * n_actions, |_, _| normal.sample(&mut r));
        let policy = ParamPolicy::tabular(n_states, n_actions).with_theta(theta)?;
        let features = FeatureMap::anchored_one_hot(n_states, n_states - 1)?;
        let lambda_hat = critic_system(&cmdp, &policy, &features, 1.0, which)?.lambda_min;
        let c_gamma = recommended_c_gamma(lambda_hat)?;
        let xi_star = exact_critic_fixpoint(&cmdp, &policy, &features, c_gamma, which)?.xi;
        Ok(FixedPolicySetup { cmdp, policy, features, which, lambda_hat, c_gamma, xi_star })
    }

    fn critic_config(&self, gamma_xi: f64, h_inner: usize, mlmc: MlmcConfig) -> CriticConfig {
        CriticConfig { c_gamma: self.c_gamma, gamma_xi, h_inner, mlmc, lambda_hat: Some(self.lambda_hat) }
    }

    fn chain(&self, seed: u64, arm: u64) -> (ChainCursor, rng::StreamRng) {
        let mut r = rng::stream(seed, &[EXPERIMENT_TAG, arm]);
        (ChainCursor::from_initial(&self.cmdp, &mut r), r)
    }

    fn critic(&self, cursor: &mut ChainCursor, r: &mut rng::StreamRng, cfg: &CriticConfig) -> Result<CriticVec> {
        let mut ctx = InnerLoop { cmdp: &self.cmdp, policy: &self.policy, cursor, rng: r, epoch: 0, sink: &mut NullSink };
        let jobs = [CriticJob { which: self.which, features: &self.features, target: None }];
        Ok(run_critic(&mut ctx, cfg, &jobs)?.remove(0))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticCurve {
    pub horizons: Vec<usize>,
    /// Median of `||xi_H - xi*||^2` per horizon.
    pub median_err_sq: Vec<f64>,
    pub xi_star_norm_sq: f64,
}

/// Runs the critic from `xi = 0` for each horizon and seed on a fresh chain.
pub fn critic_error_curve(
    setup: &FixedPolicySetup,
    gamma_xi: f64,
    horizons: &[usize],
    t_max: usize,
    seeds: std::ops::Range<u64>,
) -> Result<CriticCurve> {
    let mlmc = MlmcConfig::new(t_max)?;
    let mut medians = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let cfg = setup.critic_config(gamma_xi, h, mlmc);
        let mut errs = Vec::new();
        for seed in seeds.clone() {
            let (mut cursor, mut r) = setup.chain(seed, h as u64);
            let err = match setup.critic(&mut cursor, &mut r, &cfg) {
                Ok(xi) => xi.dist_sq(&setup.xi_star),
                Err(Error::Divergence(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            errs.push(err);
        }
        medians.push(median(&errs).unwrap_or(f64::NAN));
    }
    Ok(CriticCurve {
        horizons: horizons.to_vec(),
        median_err_sq: medians,
        xi_star_norm_sq: setup.xi_star.to_vector().norm_squared(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NpgErrors {
    /// Median `||omega_H - omega*||^2` with the exact critic fixed point.
    pub median_exact_xi: f64,
    /// Same, with `xi` from an `H`-step critic run on the same chain.
    pub median_estimated_xi: f64,
    pub omega_star_norm_sq: f64,
}

pub fn npg_errors(
    setup: &FixedPolicySetup,
    gamma_omega: f64,
    gamma_xi: f64,
    h_inner: usize,
    t_max: usize,
    mu_ridge: f64,
    seeds: std::ops::Range<u64>,
) -> Result<NpgErrors> {
    let mlmc = MlmcConfig::new(t_max)?;
    let omega_star = exact_npg(&setup.cmdp, &setup.policy, setup.which, mu_ridge)?;
    let actor_cfg = ActorConfig { gamma_omega, h_inner, mlmc, mu_ridge };
    let critic_cfg = setup.critic_config(gamma_xi, h_inner, mlmc);
    let (mut exact, mut estimated) = (Vec::new(), Vec::new());
    for seed in seeds {
        for (arm, use_exact) in [(0u64, true), (1, false)] {
            let (mut cursor, mut r) = setup.chain(seed, 1_000 + arm);
            let xi = if use_exact {
                setup.xi_star.clone()
            } else {
                match setup.critic(&mut cursor, &mut r, &critic_cfg) {
                    Ok(xi) => xi,
                    Err(Error::Divergence(_)) => {
                        estimated.push(f64::INFINITY);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            };
            let mut ctx =
                InnerLoop { cmdp: &setup.cmdp, policy: &setup.policy, cursor: &mut cursor, rng: &mut r, epoch: 0, sink: &mut NullSink };
            let jobs = [ActorJob { which: setup.which, xi: &xi, features: &setup.features, target: None }];
            let err = match run_npg(&mut ctx, &actor_cfg, &jobs) {
                Ok(w) => (&w[0] - &omega_star).norm_squared(),
                Err(Error::Divergence(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if use_exact { exact.push(err) } else { estimated.push(err) }
        }
    }
    Ok(NpgErrors {
        median_exact_xi: median(&exact).unwrap_or(f64::NAN),
        median_estimated_xi: median(&estimated).unwrap_or(f64::NAN),
        omega_star_norm_sq: omega_star.norm_squared(),
    })
}

/// Per-coordinate means and standard errors of two estimators.
#[derive(Clone, Debug, Serialize)]
pub struct MeanComparison {
    pub mlmc_mean: Vec<f64>,
    pub mlmc_se: Vec<f64>,
    pub plain_mean: Vec<f64>,
    pub plain_se: Vec<f64>,
    /// Mean second moment `E||output||^2` of the MLMC draws.
    pub mlmc_second_moment: f64,
    pub mean_samples: f64,
}

impl MeanComparison {
    /// Largest `|mlmc - plain| / sqrt(se_mlmc^2 + se_plain^2)` over coordinates.
    pub fn max_z(&self) -> f64 {
        (0..self.mlmc_mean.len())
            .map(|i| {
                let se = (self.mlmc_se[i].powi(2) + self.plain_se[i].powi(2)).sqrt();
                (self.mlmc_mean[i] - self.plain_mean[i]).abs() / se.max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: f64,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments { sum: vec![0.0; dim], sum_sq: vec![0.0; dim], n: 0.0 }
    }

    fn push(&mut self, x: &[f64]) {
        for i in 0..x.len() {
            self.sum[i] += x[i];
            self.sum_sq[i] += x[i] * x[i];
        }
        self.n += 1.0;
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n).collect()
    }

    fn se(&self) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let m = s / self.n;
                ((q / self.n - m * m).max(0.0) * self.n / (self.n - 1.0) / self.n).sqrt()
            })
            .collect()
    }
}

/// Compares `n_draws` MLMC estimates with `n_draws` plain averages over the
/// top level `2^floor(log2 t_max)`, every draw on an independent chain
/// started from the instance's initial distribution.
pub fn mlmc_vs_plain<F>(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
    estimator: F,
    dim: usize,
    t_max: usize,
    n_draws: usize,
    seed: u64,
) -> Result<MeanComparison>
where
    F: Fn(&crate::cmdp::Transition, &mut [f64]),
{
    use crate::cmdp::sample_into;
    use crate::mlmc::{draw_level, MlmcWorkspace};

    let cfg = MlmcConfig::new(t_max)?;
    let top = 1usize << cfg.max_level();
    let mut r = rng::stream(seed, &[EXPERIMENT_TAG, 7]);
    let mut ws = MlmcWorkspace::new(dim);
    let mut out = vec![0.0; dim];
    let mut value = vec![0.0; dim];
    let mut buf = Vec::new();
    let (mut mlmc, mut plain) = (Moments::new(dim), Moments::new(dim));
    let (mut second, mut samples) = (0.0, 0.0);
    for _ in 0..n_draws {
        let draw = draw_level(&mut r, &cfg);
        let mut cursor = ChainCursor::from_initial(cmdp, &mut r);
        buf.clear();
        sample_into(cmdp, policy, &mut cursor, draw.traj_len, &mut r, &mut buf)?;
        ws.estimate(|z, o| estimator(z, o), &buf, &draw, &mut out)?;
        mlmc.push(&out);
        second += out.iter().map(|x| x * x).sum::<f64>();
        samples += draw.traj_len as f64;

        let mut cursor = ChainCursor::from_initial(cmdp, &mut r);
        buf.clear();
        sample_into(cmdp, policy, &mut cursor, top, &mut r, &mut buf)?;
        out.iter_mut().for_each(|x| *x = 0.0);
        for z in &buf {
            estimator(z, &mut value);
            for (o, v) in out.iter_mut().zip(&value) {
                *o += v / top as f64;
            }
        }
        plain.push(&out);
    }
    let n = n_draws as f64;
    Ok(MeanComparison {
        mlmc_mean: mlmc.mean(),
        mlmc_se: mlmc.se(),
        plain_mean: plain.mean(),
        plain_se: plain.se(),
        mlmc_second_moment: second / n,
        mean_samples: samples / n,
    })
}
