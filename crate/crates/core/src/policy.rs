//! Softmax policy families and their score functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cmdp::TabularCmdp;
use crate::error::{Error, Result};
use crate::linalg::{outer, Mat, Vector};

/// A differentiable policy family `theta -> pi_theta`.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyFamily {
    /// One logit per `(s, a)`: `theta[s * n_actions + a]`.
    TabularSoftmax { n_states: usize, n_actions: usize },
    /// Logits `<psi(s, a), theta>` with `psi(s, a)` stored as column
    /// `s * n_actions + a` of a `d x (n_states * n_actions)` matrix.
    LinearSoftmax {
        n_states: usize,
        n_actions: usize,
        features: Mat,
    },
}

/// JSON layout of linear-softmax features: `d` rows of length `n_states * n_actions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearFeaturesDoc {
    pub n_states: usize,
    pub n_actions: usize,
    pub rows: Vec<Vec<f64>>,
}

impl PolicyFamily {
    pub fn n_states(&self) -> usize {
        match self {
            PolicyFamily::TabularSoftmax { n_states, .. } | PolicyFamily::LinearSoftmax { n_states, .. } => *n_states,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            PolicyFamily::TabularSoftmax { n_actions, .. } | PolicyFamily::LinearSoftmax { n_actions, .. } => {
                *n_actions
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PolicyFamily::TabularSoftmax { n_states, n_actions } => n_states * n_actions,
            PolicyFamily::LinearSoftmax { features, .. } => features.nrows(),
        }
    }

    pub fn linear_from_doc(doc: &LinearFeaturesDoc) -> Result<Self> {
        let cols = doc.n_states * doc.n_actions;
        if doc.rows.is_empty() || doc.rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config(format!(
                "policy features must be d rows of length {cols}"
            )));
        }
        let d = doc.rows.len();
        let features = Mat::from_fn(d, cols, |i, j| doc.rows[i][j]);
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("policy features must be finite"));
        }
        Ok(PolicyFamily::LinearSoftmax {
            n_states: doc.n_states,
            n_actions: doc.n_actions,
            features,
        })
    }

    /// Largest feature norm `max ||psi(s, a)||` (1 for tabular).
    fn max_feature_norm(&self) -> f64 {
        match self {
            PolicyFamily::TabularSoftmax { .. } => 1.0,
            PolicyFamily::LinearSoftmax { features, .. } => features
                .column_iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max),
        }
    }
}

/// A member `pi_theta` of a [`PolicyFamily`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPolicy {
    family: Arc<PolicyFamily>,
    theta: Vector,
}

impl ParamPolicy {
    pub fn new(family: PolicyFamily, theta: Vector) -> Result<Self> {
        ParamPolicy {
            theta: Vector::zeros(family.dim()),
            family: Arc::new(family),
        }
        .with_theta(theta)
    }

    /// Tabular softmax at `theta = 0` (the uniform policy).
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let family = PolicyFamily::TabularSoftmax { n_states, n_actions };
        ParamPolicy {
            theta: Vector::zeros(family.dim()),
            family: Arc::new(family),
        }
    }

    /// Same family, new parameters.
    pub fn with_theta(&self, theta: Vector) -> Result<Self> {
        if theta.len() != self.family.dim() {
            return Err(Error::config(format!(
                "theta has dimension {} but the family expects {}",
                theta.len(),
                self.family.dim()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("theta has non-finite entries"));
        }
        Ok(ParamPolicy {
            family: Arc::clone(&self.family),
            theta,
        })
    }

    pub fn family(&self) -> &PolicyFamily {
        &self.family
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_states(&self) -> usize {
        self.family.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.family.n_actions()
    }

    pub fn check_compatible(&self, cmdp: &TabularCmdp) -> Result<()> {
        if self.n_states() != cmdp.n_states() || self.n_actions() != cmdp.n_actions() {
            return Err(Error::config(format!(
                "policy is defined on {}x{} but the CMDP is {}x{}",
                self.n_states(),
                self.n_actions(),
                cmdp.n_states(),
                cmdp.n_actions()
            )));
        }
        Ok(())
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states() {
            return Err(Error::Contract(format!("state {s} out of range")));
        }
        Ok(())
    }

    fn logit(&self, s: usize, a: usize) -> f64 {
        match &*self.family {
            PolicyFamily::TabularSoftmax { n_actions, .. } => self.theta[s * n_actions + a],
            PolicyFamily::LinearSoftmax { n_actions, features, .. } => {
                features.column(s * n_actions + a).dot(&self.theta)
            }
        }
    }

    /// Writes `pi(.|s)` into `out` (length `n_actions`).
    pub fn action_probs_into(&self, s: usize, out: &mut [f64]) -> Result<()> {
        self.check_state(s)?;
        let mut max = f64::NEG_INFINITY;
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.logit(s, a);
            max = max.max(*slot);
        }
        if !max.is_finite() {
            return Err(Error::numeric(format!("non-finite logits in state {s}")));
        }
        let mut total = 0.0;
        for slot in out.iter_mut() {
            *slot = (*slot - max).exp();
            total += *slot;
        }
        for slot in out.iter_mut() {
            *slot /= total;
        }
        Ok(())
    }

    pub fn action_probs(&self, s: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_actions()];
        self.action_probs_into(s, &mut out)?;
        Ok(out)
    }

    /// `pi(a|s)` for every state, as `[s][a]`.
    pub fn probs_table(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n_states()).map(|s| self.action_probs(s)).collect()
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        self.check_state(s)?;
        let logits: Vec<f64> = (0..self.n_actions()).map(|b| self.logit(s, b)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(logits[a] - lse)
    }

    /// Score `grad_theta log pi(a|s) = psi(s,a) - sum_b pi(b|s) psi(s,b)`,
    /// given `probs = pi(.|s)`. `out` is overwritten.
    pub fn score_with_probs(&self, s: usize, a: usize, probs: &[f64], out: &mut [f64]) {
        match &*self.family {
            PolicyFamily::TabularSoftmax { n_actions, .. } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                let base = s * n_actions;
                for (b, p) in probs.iter().enumerate() {
                    out[base + b] = -p;
                }
                out[base + a] += 1.0;
            }
            PolicyFamily::LinearSoftmax { n_actions, features, .. } => {
                let base = s * n_actions;
                for (i, slot) in out.iter_mut().enumerate() {
                    let mean: f64 = probs
                        .iter()
                        .enumerate()
                        .map(|(b, p)| p * features[(i, base + b)])
                        .sum();
                    *slot = features[(i, base + a)] - mean;
                }
            }
        }
    }

    pub fn score(&self, s: usize, a: usize) -> Result<Vector> {
        if a >= self.n_actions() {
            return Err(Error::Contract(format!("action {a} out of range")));
        }
        let probs = self.action_probs(s)?;
        let mut out = Vector::zeros(self.dim());
        self.score_with_probs(s, a, &probs, out.as_mut_slice());
        Ok(out)
    }

    /// Single-sample Fisher estimate `score (x) score`.
    pub fn fisher_outer(&self, s: usize, a: usize) -> Result<Mat> {
        let g = self.score(s, a)?;
        Ok(outer(&g, &g))
    }

    /// `G1` with `||score|| <= G1` for every `theta`, `(s, a)`.
    pub fn score_bound(&self) -> f64 {
        match &*self.family {
            // ||e_a - pi||^2 = (1 - pi_a)^2 + sum_{b != a} pi_b^2 <= 2
            PolicyFamily::TabularSoftmax { .. } => std::f64::consts::SQRT_2,
            PolicyFamily::LinearSoftmax { .. } => 2.0 * self.family.max_feature_norm(),
        }
    }

    /// `G2` with `||score(theta1) - score(theta2)|| <= G2 ||theta1 - theta2||`.
    ///
    /// The Jacobian of the score is `-Cov_pi(psi(s, .))`, whose operator norm
    /// is at most `max ||psi||^2`.
    pub fn score_lipschitz(&self) -> f64 {
        self.family.max_feature_norm().powi(2)
    }
}
