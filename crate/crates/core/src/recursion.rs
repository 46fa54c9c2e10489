//! Constant-step biased stochastic linear recursion
//! `x_{h+1} = x_h - beta (P_hat_h x_h - q_hat_h)` approximating `x* = P^{-1} q`,
//! and a Monte Carlo check of its mean-square error bound.

use log::info;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_checked, spectral_norm, sym_min_eigenvalue, Mat, Vector};
use crate::rng::{self, tag, StreamRng};

/// Additive perturbations: `P_hat = P + bias_p + N_P`, `q_hat = q + bias_q + N_q`
/// with Gaussian `N` of total second moments `noise_p^2` and `noise_q^2`.
#[derive(Clone, Debug, Default)]
pub struct NoiseModel {
    pub bias_p: Option<Mat>,
    pub bias_q: Option<Vector>,
    pub noise_p: f64,
    pub noise_q: f64,
}

#[derive(Clone, Debug)]
pub struct RecursionSpec {
    pub p: Mat,
    pub q: Vector,
    pub noise: NoiseModel,
    pub beta: f64,
    pub horizon: usize,
    /// Enforce the step and bias admissibility conditions before running.
    pub admissibility_checks: bool,
}

/// Constants entering the error bound, all measured from the spec.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RecursionConstants {
    /// Quadratic-form lower bound: `x^T P x >= lambda_p ||x||^2`.
    pub lambda_p: f64,
    pub big_lambda_p: f64,
    pub big_lambda_q: f64,
    pub delta_p: f64,
    pub delta_q: f64,
    /// Upper bounds on `E||P_hat - P||^2` and `E||q_hat - q||^2` (bias included).
    pub sigma_p_sq: f64,
    pub sigma_q_sq: f64,
}

impl RecursionSpec {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn solution(&self) -> Result<Vector> {
        solve_checked(&self.p, &self.q, 1e-12)
    }

    pub fn constants(&self) -> RecursionConstants {
        let n = self.dim();
        let bias_p = self.noise.bias_p.clone().unwrap_or_else(|| Mat::zeros(n, n));
        let bias_q = self.noise.bias_q.clone().unwrap_or_else(|| Vector::zeros(n));
        RecursionConstants {
            lambda_p: sym_min_eigenvalue(&self.p),
            big_lambda_p: spectral_norm(&self.p),
            big_lambda_q: self.q.norm(),
            delta_p: spectral_norm(&bias_p),
            delta_q: bias_q.norm(),
            // Frobenius norms dominate the operator norm.
            sigma_p_sq: bias_p.norm_squared() + self.noise.noise_p.powi(2),
            sigma_q_sq: bias_q.norm_squared() + self.noise.noise_q.powi(2),
        }
    }

    /// `delta_P <= lambda_P / 8` and `beta <= lambda_P / (4 (6 sigma_P^2 + 2 Lambda_P^2))`.
    pub fn admissible(&self) -> (bool, bool) {
        let c = self.constants();
        let bias_ok = c.delta_p <= c.lambda_p / 8.0;
        let step_ok = self.beta <= c.lambda_p / (4.0 * (6.0 * c.sigma_p_sq + 2.0 * c.big_lambda_p.powi(2)));
        (bias_ok, step_ok)
    }

    /// Bias-plus-variance floor
    /// `4/l^2 [2 dP^2 Lq^2 / l^2 + dq^2] + 6 beta / l [Lq^2 sP^2 / l^2 + sq^2]`.
    pub fn floor_term(&self) -> f64 {
        let c = self.constants();
        let l = c.lambda_p;
        let lq2 = c.big_lambda_q.powi(2);
        4.0 / (l * l) * (2.0 * c.delta_p.powi(2) * lq2 / (l * l) + c.delta_q.powi(2))
            + 6.0 * self.beta / l * (lq2 * c.sigma_p_sq / (l * l) + c.sigma_q_sq)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::config("P must be square and match q"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("step must be positive"));
        }
        let c = self.constants();
        if !(c.lambda_p > 0.0) {
            return Err(Error::config(format!("P is not coercive (lambda_P = {:.3e})", c.lambda_p)));
        }
        let (bias_ok, step_ok) = self.admissible();
        if !(bias_ok && step_ok) {
            if self.admissibility_checks {
                return Err(Error::config(format!(
                    "spec outside the admissible region (bias ok: {bias_ok}, step ok: {step_ok})"
                )));
            }
            info!("recursion spec outside the admissible region (bias ok: {bias_ok}, step ok: {step_ok})");
        }
        Ok(())
    }

    fn sample(&self, rng: &mut StreamRng) -> (Mat, Vector) {
        let n = self.dim();
        let mut p = self.p.clone();
        let mut q = self.q.clone();
        if let Some(b) = &self.noise.bias_p {
            p += b;
        }
        if let Some(b) = &self.noise.bias_q {
            q += b;
        }
        if self.noise.noise_p > 0.0 {
            let s = self.noise.noise_p / n as f64;
            p += Mat::from_fn(n, n, |_, _| { let x: f64 = StandardNormal.sample(rng); s * x });
        }
        if self.noise.noise_q > 0.0 {
            let s = self.noise.noise_q / (n as f64).sqrt();
            q += Vector::from_fn(n, |_, _| { let x: f64 = StandardNormal.sample(rng); s * x });
        }
        (p, q)
    }
}

/// Iterates `H` steps from `x0`; returns `x_0, ..., x_H`.
pub fn run_recursion(spec: &RecursionSpec, x0: &Vector, seed: u64) -> Result<Vec<Vector>> {
    spec.validate()?;
    run_unchecked(spec, x0, &mut rng::stream(seed, &[tag::REPLICA]))
}

fn run_unchecked(spec: &RecursionSpec, x0: &Vector, rng: &mut StreamRng) -> Result<Vec<Vector>> {
    if x0.len() != spec.dim() {
        return Err(Error::Contract("x0 dimension differs from the spec".into()));
    }
    let mut xs = Vec::with_capacity(spec.horizon + 1);
    let mut x = x0.clone();
    xs.push(x.clone());
    for h in 0..spec.horizon {
        let (p, q) = spec.sample(rng);
        x -= (p * &x - q) * spec.beta;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence(format!("recursion iterate not finite at step {h}")));
        }
        xs.push(x.clone());
    }
    Ok(xs)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub replicas: usize,
    pub horizon: usize,
    pub beta: f64,
    pub constants: RecursionConstants,
    pub bias_admissible: bool,
    pub step_admissible: bool,
    /// Monte Carlo `E||x_H - x*||^2`.
    pub measured: f64,
    pub standard_error: f64,
    /// `||mean(x_H) - x*||^2`.
    pub mean_bias_sq: f64,
    pub contraction_term: f64,
    pub floor_term: f64,
    pub slack: f64,
    /// `contraction + slack * floor`.
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
    /// Mean-square error after each step, `h = 0..=H`.
    pub msq_curve: Vec<f64>,
}

/// Monte Carlo estimate of `E||x_H - x*||^2` against
/// `exp(-H beta lambda_P) ||x0 - x*||^2 + slack * floor`.
pub fn verify_recursion_bound(spec: &RecursionSpec, x0: &Vector, replicas: usize, slack: f64, seed: u64) -> Result<BoundReport> {
    spec.validate()?;
    if replicas == 0 {
        return Err(Error::Contract("at least one replica required".into()));
    }
    let x_star = spec.solution()?;
    let n = spec.dim();
    let mut msq_curve = vec![0.0; spec.horizon + 1];
    let mut finals = Vec::with_capacity(replicas);
    let mut mean_final = Vector::zeros(n);
    for r in 0..replicas {
        let mut rng = rng::stream(seed, &[tag::REPLICA, r as u64]);
        let xs = run_unchecked(spec, x0, &mut rng)?;
        for (acc, x) in msq_curve.iter_mut().zip(&xs) {
            *acc += (x - &x_star).norm_squared();
        }
        let last = xs.last().expect("horizon + 1 iterates");
        finals.push((last - &x_star).norm_squared());
        mean_final += last;
    }
    let m = replicas as f64;
    msq_curve.iter_mut().for_each(|v| *v /= m);
    mean_final /= m;
    let measured = finals.iter().sum::<f64>() / m;
    let var = if replicas > 1 {
        finals.iter().map(|v| (v - measured).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let c = spec.constants();
    let contraction_term = (-(spec.horizon as f64) * spec.beta * c.lambda_p).exp() * (x0 - &x_star).norm_squared();
    let floor_term = spec.floor_term();
    let bound = contraction_term + slack * floor_term;
    let ratio = if bound > 0.0 { measured / bound } else if measured == 0.0 { 0.0 } else { f64::INFINITY };
    let (bias_admissible, step_admissible) = spec.admissible();
    Ok(BoundReport {
        replicas,
        horizon: spec.horizon,
        beta: spec.beta,
        constants: c,
        bias_admissible,
        step_admissible,
        measured,
        standard_error: (var / m).sqrt(),
        mean_bias_sq: (mean_final - x_star).norm_squared(),
        contraction_term,
        floor_term,
        slack,
        bound,
        ratio,
        pass: ratio <= 1.0,
        msq_curve,
    })
}

/// Deterministic symmetric positive-definite test matrix with eigenvalues
/// spread evenly over `[lo, hi]`.
pub fn spd_matrix(n: usize, lo: f64, hi: f64, seed: u64) -> Mat {
    let mut rng = rng::stream(seed, &[tag::GENERATOR, 77]);
    let g = Mat::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let q = g.qr().q();
    let eig = Vector::from_fn(n, |i, _| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 });
    &q * Mat::from_diagonal(&eig) * q.transpose()
}

/// Noise regimes of the reference self-test.
pub const REGIMES: [&str; 4] = ["noiseless", "variance_only", "bias_only", "both"];

/// A 5-dimensional SPD reference problem (spectrum in `[0.5, 2]`) under the
/// named regime. Bias on `P_hat` sits at the admissibility edge
/// `delta_P = lambda_P / 8`; the step is 0.9 of the admissible limit of the
/// noisiest regime and shared by all regimes.
pub fn reference_spec(regime: &str, horizon: usize, seed: u64) -> Result<RecursionSpec> {
    let n = 5;
    let p = spd_matrix(n, 0.5, 2.0, seed);
    let mut rng = rng::stream(seed, &[tag::GENERATOR, 78]);
    let mut gauss = |len: usize| -> Vector { Vector::from_fn(len, |_, _| StandardNormal.sample(&mut rng)) };
    let q = gauss(n).normalize();
    let u = gauss(n).normalize();
    let bias_p = &u * u.transpose() * (0.5 / 8.0);
    let bias_q = gauss(n).normalize() * 0.05;
    let both = NoiseModel { bias_p: Some(bias_p.clone()), bias_q: Some(bias_q.clone()), noise_p: 0.2, noise_q: 0.3 };
    let noise = match regime {
        "noiseless" => NoiseModel::default(),
        "variance_only" => NoiseModel { bias_p: None, bias_q: None, ..both.clone() },
        "bias_only" => NoiseModel { noise_p: 0.0, noise_q: 0.0, ..both.clone() },
        "both" => both.clone(),
        other => return Err(Error::config(format!("unknown noise regime {other:?}"))),
    };
    let mut spec = RecursionSpec { p, q, noise: both, beta: 1.0, horizon, admissibility_checks: true };
    let c = spec.constants();
    spec.beta = 0.9 * c.lambda_p / (4.0 * (6.0 * c.sigma_p_sq + 2.0 * c.big_lambda_p.powi(2)));
    spec.noise = noise;
    Ok(spec)
}
