//! Multi-level Monte Carlo estimates over one Markovian trajectory.
//!
//! A draw picks a level `Q ~ Geom(1/2)` on `{1, 2, ...}`. If `2^Q <= t_max`
//! the trajectory has `2^Q` transitions and the estimate is
//! `g^0 + 2^Q (g^Q - g^{Q-1})`, where `g^j` averages the first `2^j`
//! per-transition values. Otherwise only one transition is used and the
//! estimate is `g^0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::Transition;
use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmcConfig {
    pub t_max: usize,
}

impl MlmcConfig {
    pub fn new(t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::config("t_max must be at least 1"));
        }
        Ok(MlmcConfig { t_max })
    }

    /// `floor(log2 t_max)`, the highest level that is not truncated.
    pub fn max_level(&self) -> u32 {
        usize::BITS - 1 - self.t_max.leading_zeros()
    }

    /// `sum_{j <= max_level} 2^-j 2^j + P(Q > max_level) = max_level + 2^-max_level`.
    pub fn expected_traj_len(&self) -> f64 {
        let j = self.max_level() as i32;
        j as f64 + 2f64.powi(-j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MlmcDraw {
    pub level: u32,
    pub traj_len: usize,
}

impl MlmcDraw {
    pub fn for_level(level: u32, cfg: &MlmcConfig) -> Self {
        let traj_len = if level < usize::BITS - 1 && (1usize << level) <= cfg.t_max {
            1usize << level
        } else {
            1
        };
        MlmcDraw { level, traj_len }
    }

    /// Whether the telescoping correction is active.
    pub fn corrected(&self) -> bool {
        self.traj_len > 1
    }

    pub fn samples_used(&self) -> usize {
        self.traj_len
    }
}

/// `P(Q = j) = 2^-j` for `j >= 1`.
pub fn draw_level(rng: &mut impl Rng, cfg: &MlmcConfig) -> MlmcDraw {
    let bits = loop {
        let u: u64 = rng.random();
        if u != 0 {
            break u;
        }
    };
    MlmcDraw::for_level(bits.trailing_zeros() + 1, cfg)
}

/// Reusable buffers for [`MlmcWorkspace::estimate`].
#[derive(Clone, Debug)]
pub struct MlmcWorkspace {
    value: Vec<f64>,
    first: Vec<f64>,
    half: Vec<f64>,
    full: Vec<f64>,
}

impl MlmcWorkspace {
    pub fn new(dim: usize) -> Self {
        MlmcWorkspace { value: vec![0.0; dim], first: vec![0.0; dim], half: vec![0.0; dim], full: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    /// Writes the MLMC estimate of `estimator` over `trajectory` into `out`.
    ///
    /// `estimator(z, buf)` must overwrite all of `buf`.
    pub fn estimate<F>(&mut self, mut estimator: F, trajectory: &[Transition], draw: &MlmcDraw, out: &mut [f64]) -> Result<()>
    where
        F: FnMut(&Transition, &mut [f64]),
    {
        if trajectory.len() != draw.traj_len {
            return Err(Error::Contract(format!(
                "trajectory has {} transitions, draw requires {}",
                trajectory.len(),
                draw.traj_len
            )));
        }
        if out.len() != self.dim() {
            return Err(Error::Contract(format!("output has length {}, expected {}", out.len(), self.dim())));
        }
        let half_len = draw.traj_len / 2;
        self.full.iter_mut().for_each(|x| *x = 0.0);
        for (t, z) in trajectory.iter().enumerate() {
            estimator(z, &mut self.value);
            if t == 0 {
                self.first.copy_from_slice(&self.value);
            }
            for (acc, v) in self.full.iter_mut().zip(&self.value) {
                *acc += v;
            }
            if t + 1 == half_len {
                self.half.copy_from_slice(&self.full);
            }
        }
        if draw.corrected() {
            // g0 + 2^Q (S_full / 2^Q - S_half / 2^{Q-1}) = g0 + S_full - 2 S_half
            for i in 0..out.len() {
                out[i] = self.first[i] + self.full[i] - 2.0 * self.half[i];
            }
        } else {
            out.copy_from_slice(&self.first);
        }
        Ok(())
    }
}

/// Allocating convenience wrapper around [`MlmcWorkspace::estimate`].
pub fn mlmc_estimate<F>(estimator: F, trajectory: &[Transition], draw: &MlmcDraw, dim: usize) -> Result<Vector>
where
    F: FnMut(&Transition, &mut [f64]),
{
    let mut ws = MlmcWorkspace::new(dim);
    let mut out = vec![0.0; dim];
    ws.estimate(estimator, trajectory, draw, &mut out)?;
    Ok(Vector::from_vec(out))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MlmcCostReport {
    pub n_draws: usize,
    pub mean_samples: f64,
    pub p99_samples: usize,
    pub max_samples: usize,
}

impl MlmcCostReport {
    /// Admissible range `[0.5 log2 t_max, 2 log2 t_max + 2]` of the mean cost.
    pub fn band(t_max: usize) -> (f64, f64) {
        let l = (t_max as f64).log2();
        (0.5 * l, 2.0 * l + 2.0)
    }

    /// Mean within [`Self::band`]; always true below `t_max = 8`.
    pub fn within_band(&self, t_max: usize) -> bool {
        if t_max < 8 {
            return true;
        }
        let (lo, hi) = Self::band(t_max);
        self.mean_samples >= lo && self.mean_samples <= hi
    }
}

pub fn mlmc_cost_report(samples: impl IntoIterator<Item = usize>) -> Result<MlmcCostReport> {
    let mut all: Vec<usize> = samples.into_iter().collect();
    if all.is_empty() {
        return Err(Error::Contract("cost report over an empty log".into()));
    }
    all.sort_unstable();
    let n = all.len();
    let mean = all.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let idx = ((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok(MlmcCostReport { n_draws: n, mean_samples: mean, p99_samples: all[idx], max_samples: all[n - 1] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn positions(len: usize) -> Vec<Transition> {
        (0..len).map(|t| Transition { s: t, a: 0, s_next: t + 1, reward: 0.0, cost: 0.0 }).collect()
    }

    #[test]
    fn level_law() {
        let cfg = MlmcConfig::new(1 << 10).unwrap();
        let mut rng = rng::stream(7, &[1]);
        let n = 1_000_000;
        let ones = (0..n).filter(|_| draw_level(&mut rng, &cfg).level == 1).count();
        let p = ones as f64 / n as f64;
        assert!((p - 0.5).abs() <= 0.002, "P(Q=1) = {p}");
    }

    #[test]
    fn expected_length_closed_form() {
        let cfg = MlmcConfig::new(1 << 10).unwrap();
        assert!((cfg.expected_traj_len() - (10.0 + 2f64.powi(-10))).abs() < 1e-15);
        // Direct sum over levels as an independent check.
        let direct: f64 = (1..=60).map(|j| 0.5f64.powi(j) * MlmcDraw::for_level(j as u32, &cfg).traj_len as f64).sum();
        assert!((direct - cfg.expected_traj_len()).abs() < 1e-12);
        let mut rng = rng::stream(8, &[1]);
        let report = mlmc_cost_report((0..100_000).map(|_| draw_level(&mut rng, &cfg).traj_len)).unwrap();
        assert!((report.mean_samples - 10.0).abs() <= 0.3, "{report:?}");
        assert!(report.p99_samples <= cfg.t_max);
        assert!(report.within_band(cfg.t_max));
    }

    #[test]
    fn unit_budget_never_corrects() {
        let cfg = MlmcConfig::new(1).unwrap();
        let mut rng = rng::stream(9, &[1]);
        let report = mlmc_cost_report((0..10_000).map(|_| draw_level(&mut rng, &cfg).traj_len)).unwrap();
        assert_eq!(report.mean_samples, 1.0);
        assert_eq!(cfg.max_level(), 0);
    }

    #[test]
    fn rejects_zero_budget_and_empty_log() {
        assert!(MlmcConfig::new(0).is_err());
        assert!(mlmc_cost_report(Vec::new()).is_err());
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let cfg = MlmcConfig::new(16).unwrap();
        let draw = MlmcDraw::for_level(2, &cfg);
        let r = mlmc_estimate(|_, out| out[0] = 1.0, &positions(3), &draw, 1);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn two_level_algebra() {
        let cfg = MlmcConfig::new(4).unwrap();
        let draw = MlmcDraw::for_level(1, &cfg);
        let xs = [0.3, -1.7];
        let out = mlmc_estimate(|z, o| o[0] = xs[z.s], &positions(2), &draw, 1).unwrap();
        assert!((out[0] - xs[1]).abs() < 1e-15);
    }

    #[test]
    fn truncated_level_returns_first_value() {
        let cfg = MlmcConfig::new(4).unwrap();
        let draw = MlmcDraw::for_level(3, &cfg);
        assert_eq!(draw.traj_len, 1);
        let out = mlmc_estimate(|_, o| o[0] = 2.5, &positions(1), &draw, 1).unwrap();
        assert_eq!(out[0], 2.5);
    }

    proptest! {
        #[test]
        fn constant_estimator_passes_through(level in 1u32..8, v in prop::collection::vec(-5.0f64..5.0, 1..4)) {
            let cfg = MlmcConfig::new(64).unwrap();
            let draw = MlmcDraw::for_level(level, &cfg);
            let out = mlmc_estimate(|_, o| o.copy_from_slice(&v), &positions(draw.traj_len), &draw, v.len()).unwrap();
            for (x, y) in out.iter().zip(&v) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        /// For a position-dependent sequence, the level-weighted combination
        /// of outputs telescopes to the plain average at the top level.
        #[test]
        fn telescopes_to_top_level_average(top in 0u32..=6, xs in prop::collection::vec(-3.0f64..3.0, 64)) {
            let cfg = MlmcConfig::new(1 << top).unwrap();
            let mut expectation = 0.0;
            let mut tail = 1.0;
            for level in 1..=top + 1 {
                let draw = MlmcDraw::for_level(level, &cfg);
                let out = mlmc_estimate(|z, o| o[0] = xs[z.s], &positions(draw.traj_len), &draw, 1).unwrap();
                // Levels above `top` all return the first value; lump them.
                let weight = if level <= top { 0.5f64.powi(level as i32) } else { tail };
                tail -= weight;
                expectation += weight * out[0];
            }
            let n = 1usize << top;
            let plain = xs[..n].iter().sum::<f64>() / n as f64;
            prop_assert!((expectation - plain).abs() < 1e-12);
        }
    }
}
