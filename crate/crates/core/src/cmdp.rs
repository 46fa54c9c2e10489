//! Finite constrained MDPs, the simulated chain, and instance generators.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_irreducible, is_primitive, Mat};
use crate::policy::ParamPolicy;
use crate::rng::{self, tag, StreamRng};

const SUM_TOL: f64 = 1e-12;

/// Which per-step signal of the CMDP a quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Reward,
    Cost,
}

impl Signal {
    pub const BOTH: [Signal; 2] = [Signal::Reward, Signal::Cost];
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Reward => f.write_str("reward"),
            Signal::Cost => f.write_str("cost"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: String,
}

/// A finite CMDP `(S, A, r, c, P, rho)` with reward in `[0,1]` and cost in `[-1,1]`.
///
/// Immutable after construction; all invariants are checked by [`TabularCmdp::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct TabularCmdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    reward: Vec<f64>,
    cost: Vec<f64>,
    initial: Vec<f64>,
    meta: CmdpMeta,
}

/// One observed step `z = (s, a, s')` together with the signals paid at `(s, a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub reward: f64,
    pub cost: f64,
}

impl Transition {
    #[inline]
    pub fn value(&self, which: Signal) -> f64 {
        match which {
            Signal::Reward => self.reward,
            Signal::Cost => self.cost,
        }
    }
}

/// Position of the single simulated chain.
///
/// The state only moves through [`sample_trajectory`]; nothing resets it
/// between critic and actor subroutines. Randomness is supplied by the caller
/// as a keyed stream (see [`crate::rng`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainCursor {
    state: usize,
    steps: u64,
}

impl ChainCursor {
    pub fn new(state: usize) -> Self {
        ChainCursor { state, steps: 0 }
    }

    /// Draws `s_0 ~ rho`.
    pub fn from_initial(cmdp: &TabularCmdp, rng: &mut impl Rng) -> Self {
        ChainCursor::new(sample_categorical(cmdp.initial_dist(), rng))
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Transitions consumed since construction.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final partial sum: return the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl TabularCmdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        cost: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("CMDP needs at least one state and one action"));
        }
        let sa = n_states * n_actions;
        if transition.len() != sa * n_states
            || reward.len() != sa
            || cost.len() != sa
            || initial.len() != n_states
        {
            return Err(Error::config("CMDP array sizes do not match n_states/n_actions"));
        }
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            check_distribution(chunk).map_err(|why| {
                Error::config(format!(
                    "P[{}][{}] is not a distribution: {why}",
                    row / n_actions,
                    row % n_actions
                ))
            })?;
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::config(format!("reward {r} outside [0, 1]")));
        }
        if let Some(c) = cost.iter().find(|c| !(-1.0..=1.0).contains(*c)) {
            return Err(Error::config(format!("cost {c} outside [-1, 1]")));
        }
        check_distribution(&initial)
            .map_err(|why| Error::config(format!("initial distribution: {why}")))?;
        Ok(TabularCmdp {
            n_states,
            n_actions,
            transition,
            reward,
            cost,
            initial,
            meta: CmdpMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: CmdpMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn meta(&self) -> &CmdpMeta {
        &self.meta
    }

    /// `P(. | s, a)`.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    #[inline]
    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    #[inline]
    pub fn signal(&self, which: Signal, s: usize, a: usize) -> f64 {
        match which {
            Signal::Reward => self.reward(s, a),
            Signal::Cost => self.cost(s, a),
        }
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial
    }

    /// Same dynamics with the reward or cost table replaced.
    pub fn with_signal(&self, which: Signal, table: Vec<f64>) -> Result<Self> {
        let (mut reward, mut cost) = (self.reward.clone(), self.cost.clone());
        match which {
            Signal::Reward => reward = table,
            Signal::Cost => cost = table,
        }
        Ok(TabularCmdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            cost,
            self.initial.clone(),
        )?
        .with_meta(self.meta.clone()))
    }

    /// State-to-state kernel `P^pi(s, s') = sum_a pi(a|s) P(s'|s,a)` for an
    /// explicit action-probability table `probs[s][a]`.
    pub fn induced_kernel(&self, probs: &[Vec<f64>]) -> Mat {
        let n = self.n_states;
        let mut k = Mat::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = probs[s][a];
                if w == 0.0 {
                    continue;
                }
                for (t, p) in self.next_dist(s, a).iter().enumerate() {
                    k[(s, t)] += w * p;
                }
            }
        }
        k
    }

    /// Random ergodic instance: every `P(.|s,a)` is a flat-Dirichlet draw
    /// mixed with the uniform distribution at weight `smoothing`.
    pub fn random_ergodic(n_states: usize, n_actions: usize, seed: u64, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0 && smoothing <= 1.0) {
            return Err(Error::config(format!(
                "smoothing must lie in (0, 1], got {smoothing}"
            )));
        }
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("CMDP needs at least one state and one action"));
        }
        let mut rng = rng::stream(seed, &[tag::GENERATOR]);
        let floor = smoothing / n_states as f64;
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let draws: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            transition.extend(draws.iter().map(|x| (1.0 - smoothing) * x / total + floor));
        }
        let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let cost = (0..n_states * n_actions)
            .map(|_| 2.0 * rng.random::<f64>() - 1.0)
            .collect();
        let initial = vec![1.0 / n_states as f64; n_states];
        Ok(TabularCmdp::new(n_states, n_actions, transition, reward, cost, initial)?.with_meta(CmdpMeta {
            seed: Some(seed),
            generator: format!("random_ergodic(smoothing={smoothing})"),
        }))
    }

    /// Two-state, two-action instance whose constraint binds at the optimum.
    ///
    /// Action 1 pays more reward in both states, but in state 0 it incurs a
    /// large negative cost. The optimal policy randomizes in state 0 and
    /// plays action 1 in state 1; the uniform policy is infeasible.
    pub fn benchmark() -> Self {
        let transition = vec![
            0.4, 0.6, //
            0.25, 0.75, //
            0.5, 0.5, //
            0.7, 0.3,
        ];
        let reward = vec![0.05, 0.7, 0.1, 0.9];
        let cost = vec![1.0, -0.75, -1.0, 0.1];
        TabularCmdp::new(2, 2, transition, reward, cost, vec![0.5, 0.5])
            .expect("benchmark instance is valid")
            .with_meta(CmdpMeta {
                seed: None,
                generator: "benchmark_2x2".into(),
            })
    }

    pub fn to_document(&self) -> CmdpDocument {
        let (n, m) = (self.n_states, self.n_actions);
        CmdpDocument {
            n_states: n,
            n_actions: m,
            transition: (0..n)
                .map(|s| (0..m).map(|a| self.next_dist(s, a).to_vec()).collect())
                .collect(),
            reward: self.reward.chunks(m).map(<[f64]>::to_vec).collect(),
            cost: self.cost.chunks(m).map(<[f64]>::to_vec).collect(),
            initial_dist: self.initial.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn from_document(doc: CmdpDocument) -> Result<Self> {
        let (n, m) = (doc.n_states, doc.n_actions);
        let shape_err = || Error::config("CMDP document arrays do not match n_states/n_actions");
        if doc.transition.len() != n
            || doc.transition.iter().any(|row| row.len() != m || row.iter().any(|p| p.len() != n))
            || doc.reward.len() != n
            || doc.reward.iter().any(|r| r.len() != m)
            || doc.cost.len() != n
            || doc.cost.iter().any(|c| c.len() != m)
        {
            return Err(shape_err());
        }
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        let reward = doc.reward.into_iter().flatten().collect();
        let cost = doc.cost.into_iter().flatten().collect();
        Ok(TabularCmdp::new(n, m, transition, reward, cost, doc.initial_dist)?.with_meta(doc.meta))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// On-disk JSON layout of a CMDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    #[serde(default)]
    pub meta: CmdpMeta,
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("entry {x} is negative or non-finite"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Appends `len` transitions of the chain driven by `policy` to `out`,
/// advancing `cursor` to the final next-state.
pub fn sample_into(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
    cursor: &mut ChainCursor,
    len: usize,
    rng: &mut StreamRng,
    out: &mut Vec<Transition>,
) -> Result<()> {
    policy.check_compatible(cmdp)?;
    let mut probs = vec![0.0; cmdp.n_actions()];
    for _ in 0..len {
        let s = cursor.state;
        policy.action_probs_into(s, &mut probs)?;
        let a = sample_categorical(&probs, rng);
        let s_next = sample_categorical(cmdp.next_dist(s, a), rng);
        out.push(Transition {
            s,
            a,
            s_next,
            reward: cmdp.reward(s, a),
            cost: cmdp.cost(s, a),
        });
        cursor.state = s_next;
        cursor.steps += 1;
    }
    Ok(())
}

/// Rolls the chain forward `len >= 1` steps under `policy`.
pub fn sample_trajectory(
    cmdp: &TabularCmdp,
    policy: &ParamPolicy,
    cursor: &mut ChainCursor,
    len: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Transition>> {
    if len == 0 {
        return Err(Error::Contract("trajectory length must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(len);
    sample_into(cmdp, policy, cursor, len, rng, &mut out)?;
    Ok(out)
}

/// A probe policy that breaks ergodicity, with the reason.
#[derive(Clone, Debug)]
pub struct ErgodicityViolation {
    pub policy: Vec<Vec<f64>>,
    pub reason: &'static str,
}

/// Checks the chain induced by one explicit policy table.
pub fn check_policy_chain(cmdp: &TabularCmdp, probs: &[Vec<f64>]) -> Option<&'static str> {
    let k = cmdp.induced_kernel(probs);
    if !is_irreducible(&k) {
        Some("reducible")
    } else if !is_primitive(&k) {
        Some("periodic")
    } else {
        None
    }
}

/// Spot-checks irreducibility and aperiodicity under the uniform policy and
/// `n_probe_policies` random ones (alternately deterministic and stochastic;
/// deterministic policies have the sparsest induced support).
pub fn find_ergodicity_violation(
    cmdp: &TabularCmdp,
    n_probe_policies: usize,
    seed: u64,
) -> Option<ErgodicityViolation> {
    let (n, m) = (cmdp.n_states(), cmdp.n_actions());
    let uniform = vec![vec![1.0 / m as f64; m]; n];
    if let Some(reason) = check_policy_chain(cmdp, &uniform) {
        return Some(ErgodicityViolation { policy: uniform, reason });
    }
    let mut rng = rng::stream(seed, &[tag::PROBE]);
    for i in 0..n_probe_policies {
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    let pick = rng.random_range(0..m);
                    (0..m).map(|a| if a == pick { 1.0 } else { 0.0 }).collect()
                } else {
                    let w: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
                    let total: f64 = w.iter().sum();
                    w.iter().map(|x| x / total).collect()
                }
            })
            .collect();
        if let Some(reason) = check_policy_chain(cmdp, &probs) {
            return Some(ErgodicityViolation { policy: probs, reason });
        }
    }
    None
}

pub fn check_ergodic(cmdp: &TabularCmdp, n_probe_policies: usize, seed: u64) -> bool {
    find_ergodicity_violation(cmdp, n_probe_policies, seed).is_none()
}
