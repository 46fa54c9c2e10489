//! Critic subroutine: `H` MLMC-averaged semi-gradient steps on
//! `xi = (eta, zeta)`, where `eta` tracks the average value and `zeta`
//! weights the differential value features.

use log::warn;
use serde::Serialize;

use crate::cmdp::{Signal, Transition};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::inner::InnerLoop;
use crate::linalg::Vector;
use crate::mlmc::{MlmcConfig, MlmcWorkspace};
use crate::telemetry::CriticRow;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticVec {
    pub eta: f64,
    pub zeta: Vec<f64>,
}

impl CriticVec {
    pub fn zeros(m: usize) -> Self {
        CriticVec { eta: 0.0, zeta: vec![0.0; m] }
    }

    /// Value-feature dimension `m`.
    pub fn m(&self) -> usize {
        self.zeta.len()
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(1 + self.m(), std::iter::once(self.eta).chain(self.zeta.iter().cloned()))
    }

    pub fn from_vector(v: &Vector) -> Self {
        CriticVec { eta: v[0], zeta: v.iter().skip(1).cloned().collect() }
    }

    pub fn norm(&self) -> f64 {
        (self.eta * self.eta + self.zeta.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    pub fn dist_sq(&self, other: &CriticVec) -> f64 {
        (self.eta - other.eta).powi(2) + self.zeta.iter().zip(&other.zeta).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.eta.is_finite() && self.zeta.iter().all(|x| x.is_finite())
    }

    /// `<zeta, phi(s)>`.
    pub fn value_at(&self, features: &FeatureMap, s: usize) -> f64 {
        features.phi(s).iter().zip(&self.zeta).map(|(p, z)| p * z).sum()
    }
}

/// `c_gamma` used when no oracle is available to supply the covariance constant.
pub const FALLBACK_C_GAMMA: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticConfig {
    pub c_gamma: f64,
    pub gamma_xi: f64,
    pub h_inner: usize,
    pub mlmc: MlmcConfig,
    /// Feature covariance constant, when known. Scales the divergence guard.
    pub lambda_hat: Option<f64>,
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_gamma > 0.0 && self.c_gamma.is_finite()) {
            return Err(Error::config(format!("c_gamma must be positive, got {}", self.c_gamma)));
        }
        if !(self.gamma_xi >= 0.0 && self.gamma_xi.is_finite()) {
            return Err(Error::config(format!("gamma_xi must be >= 0, got {}", self.gamma_xi)));
        }
        if let Some(l) = self.lambda_hat {
            let needed = crate::oracle::recommended_c_gamma(l).unwrap_or(f64::INFINITY);
            if self.c_gamma < needed {
                warn!("c_gamma = {} is below the positive-definiteness threshold {needed:.4}", self.c_gamma);
            }
        }
        Ok(())
    }

    /// Abort threshold on `||xi||`.
    pub fn divergence_bound(&self) -> f64 {
        match self.lambda_hat {
            Some(l) if l > 0.0 && l.is_finite() => 1e3 * (1.0 + self.c_gamma / l),
            _ => 1e6 * (1.0 + self.c_gamma),
        }
    }
}

/// Single-transition `A(z) xi - b(z)`, written into `out` (length `1 + m`):
/// `out[0] = c_gamma (eta - g)` and
/// `out[1..] = (eta + <zeta, phi(s) - phi(s')> - g) phi(s)`.
pub fn critic_sample_grad(
    xi: &CriticVec,
    z: &Transition,
    g_value: f64,
    features: &FeatureMap,
    c_gamma: f64,
    out: &mut [f64],
) {
    let phi = features.phi(z.s);
    out[0] = c_gamma * (xi.eta - g_value);
    let td = xi.eta + xi.value_at(features, z.s) - xi.value_at(features, z.s_next) - g_value;
    for (o, p) in out[1..].iter_mut().zip(phi.iter()) {
        *o = td * p;
    }
}

/// One signal handled by [`run_critic`].
#[derive(Clone, Debug)]
pub struct CriticJob<'a> {
    pub which: Signal,
    pub features: &'a FeatureMap,
    /// Exact fixed point, for telemetry only.
    pub target: Option<&'a CriticVec>,
}

/// Runs the critic loop for every job, starting from `xi = 0`. All jobs read
/// the same trajectory at each inner step.
pub fn run_critic(ctx: &mut InnerLoop<'_>, cfg: &CriticConfig, jobs: &[CriticJob<'_>]) -> Result<Vec<CriticVec>> {
    cfg.validate()?;
    for job in jobs {
        if job.features.n_states() != ctx.cmdp.n_states() {
            return Err(Error::config("critic features do not match the instance"));
        }
    }
    let mut xis: Vec<CriticVec> = jobs.iter().map(|j| CriticVec::zeros(j.features.dim())).collect();
    let mut workspaces: Vec<MlmcWorkspace> = jobs.iter().map(|j| MlmcWorkspace::new(1 + j.features.dim())).collect();
    let mut grads: Vec<Vec<f64>> = jobs.iter().map(|j| vec![0.0; 1 + j.features.dim()]).collect();
    let mut buf = Vec::with_capacity(cfg.mlmc.t_max.min(1 << 16));
    let bound = cfg.divergence_bound();
    let emit = ctx.sink.wants_inner();

    for h in 0..cfg.h_inner {
        let draw = ctx.next_trajectory(&cfg.mlmc, &mut buf)?;
        for (i, job) in jobs.iter().enumerate() {
            let xi = &xis[i];
            workspaces[i].estimate(
                |z, out| critic_sample_grad(xi, z, z.value(job.which), job.features, cfg.c_gamma, out),
                &buf,
                &draw,
                &mut grads[i],
            )?;
            let xi = &mut xis[i];
            xi.eta -= cfg.gamma_xi * grads[i][0];
            for (z, g) in xi.zeta.iter_mut().zip(&grads[i][1..]) {
                *z -= cfg.gamma_xi * g;
            }
            if !xi.is_finite() || xi.norm() > bound {
                return Err(Error::Divergence(format!(
                    "{} critic left the admissible region at epoch {}, step {h}: ||xi|| = {:.3e} > {bound:.3e}; \
                     reduce gamma_xi (currently {}) or check c_gamma",
                    job.which,
                    ctx.epoch,
                    xi.norm(),
                    cfg.gamma_xi
                )));
            }
            if emit {
                ctx.sink.critic(&CriticRow {
                    k: ctx.epoch,
                    h,
                    which: job.which,
                    level: draw.level,
                    samples: draw.traj_len,
                    eta: xi.eta,
                    zeta_norm: xi.zeta.iter().map(|x| x * x).sum::<f64>().sqrt(),
                    err_to_oracle: job.target.map(|t| xi.dist_sq(t).sqrt()),
                });
            }
        }
    }
    Ok(xis)
}
