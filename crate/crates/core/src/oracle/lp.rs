//! Dense two-phase simplex (Bland's rule) and the occupancy-measure programs
//! built on it.

use serde::Serialize;

use crate::cmdp::{Signal, TabularCmdp};
use crate::error::{Error, Result};
use crate::oracle::stationary::{stationary_dist, PolicyTable};

const TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize c^T x` subject to the constraints and `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, obj: &mut [f64], r: usize, c: usize) {
        let p = self.rows[r][c];
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r && row[c] != 0.0 {
                let f = row[c];
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
        if obj[c] != 0.0 {
            let f = obj[c];
            for (x, y) in obj.iter_mut().zip(&pivot_row) {
                *x -= f * y;
            }
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for `cost` (length `width + 1`) given the current basis.
    fn reduced(&self, cost: &[f64]) -> Vec<f64> {
        let mut z = cost.to_vec();
        z.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = z[b];
            if cb != 0.0 {
                for (x, y) in z.iter_mut().zip(&self.rows[i]) {
                    *x -= cb * y;
                }
            }
        }
        z
    }

    fn optimize(&mut self, obj: &mut [f64], allowed: &[bool]) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            let Some(c) = (0..self.width).find(|&j| allowed[j] && obj[j] > TOL) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > TOL {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - TOL || (ratio <= br + TOL && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::numeric("linear program is unbounded"));
            };
            self.pivot(obj, r, c);
        }
        Err(Error::numeric("simplex pivot limit reached"))
    }
}

pub fn maximize(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.objective.len();
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return Err(Error::Contract("constraint width differs from objective".into()));
        }
    }
    // Normalize to nonnegative right-hand sides.
    let cons: Vec<Constraint> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                Constraint {
                    coeffs: c.coeffs.iter().map(|x| -x).collect(),
                    relation: match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    },
                    rhs: -c.rhs,
                }
            } else {
                c.clone()
            }
        })
        .collect();
    let n_slack = cons.iter().filter(|c| c.relation != Relation::Eq).count();
    let n_art = cons.iter().filter(|c| c.relation != Relation::Le).count();
    let width = n + n_slack + n_art;
    let mut rows = Vec::with_capacity(cons.len());
    let mut basis = Vec::with_capacity(cons.len());
    let (mut next_slack, mut next_art) = (n, n + n_slack);
    for c in &cons {
        let mut row = vec![0.0; width + 1];
        row[..n].copy_from_slice(&c.coeffs);
        row[width] = c.rhs;
        match c.relation {
            Relation::Le => {
                row[next_slack] = 1.0;
                basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            }
        }
        rows.push(row);
    }
    let mut t = Tableau { rows, basis, width };
    let is_art = |j: usize| j >= n + n_slack;

    if n_art > 0 {
        let cost: Vec<f64> = (0..width).map(|j| if is_art(j) { -1.0 } else { 0.0 }).collect();
        let mut obj = t.reduced(&cost);
        t.optimize(&mut obj, &vec![true; width])?;
        let infeasibility = obj[width];
        if infeasibility > 1e-9 {
            return Err(Error::Infeasible(format!(
                "constraint set is empty (phase-one residual {infeasibility:.3e})"
            )));
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < t.rows.len() {
            if is_art(t.basis[i]) {
                if let Some(c) = (0..n + n_slack).find(|&j| t.rows[i][j].abs() > 1e-9) {
                    t.pivot(&mut obj, i, c);
                    i += 1;
                } else {
                    t.rows.remove(i);
                    t.basis.remove(i);
                }
            } else {
                i += 1;
            }
        }
    }

    let mut cost = lp.objective.clone();
    cost.resize(width, 0.0);
    let mut obj = t.reduced(&cost);
    let allowed: Vec<bool> = (0..width).map(|j| !is_art(j)).collect();
    t.optimize(&mut obj, &allowed)?;
    let mut x = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs(i).max(0.0);
        }
    }
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, value })
}

/// Flow-conservation and normalization constraints over `mu(s, a)`.
fn occupancy_polytope(cmdp: &TabularCmdp) -> Vec<Constraint> {
    let (n, m) = (cmdp.n_states(), cmdp.n_actions());
    let mut cons = Vec::with_capacity(n + 1);
    for s_next in 0..n {
        let mut coeffs = vec![0.0; n * m];
        for s in 0..n {
            for a in 0..m {
                coeffs[s * m + a] -= cmdp.prob(s, a, s_next);
            }
        }
        for a in 0..m {
            coeffs[s_next * m + a] += 1.0;
        }
        cons.push(Constraint { coeffs, relation: Relation::Eq, rhs: 0.0 });
    }
    cons.push(Constraint { coeffs: vec![1.0; n * m], relation: Relation::Eq, rhs: 1.0 });
    cons
}

fn signal_vector(cmdp: &TabularCmdp, which: Signal) -> Vec<f64> {
    let mut out = Vec::with_capacity(cmdp.n_states() * cmdp.n_actions());
    for s in 0..cmdp.n_states() {
        for a in 0..cmdp.n_actions() {
            out.push(cmdp.signal(which, s, a));
        }
    }
    out
}

fn to_table(x: &[f64], n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|s| x[s * m..(s + 1) * m].to_vec()).collect()
}

/// Optimal value and occupancy measure of the constrained problem.
#[derive(Clone, Debug, Serialize)]
pub struct CmdpLpSolution {
    pub j_star: f64,
    /// `[s][a]`
    pub occupancy: Vec<Vec<f64>>,
    /// Average cost of the optimal occupancy.
    pub j_c_star: f64,
    /// `max_pi J_c`.
    pub slater_margin: f64,
    pub policy: PolicyTable,
}

pub fn slater_margin(cmdp: &TabularCmdp) -> Result<f64> {
    let lp = LinearProgram { objective: signal_vector(cmdp, Signal::Cost), constraints: occupancy_polytope(cmdp) };
    Ok(maximize(&lp)?.value)
}

pub fn solve_cmdp_lp(cmdp: &TabularCmdp) -> Result<CmdpLpSolution> {
    let (n, m) = (cmdp.n_states(), cmdp.n_actions());
    let delta = slater_margin(cmdp)?;
    if delta < -1e-12 {
        return Err(Error::Infeasible(format!(
            "every policy has negative average cost (max J_c = {delta:.6})"
        )));
    }
    let cost = signal_vector(cmdp, Signal::Cost);
    let mut constraints = occupancy_polytope(cmdp);
    constraints.push(Constraint { coeffs: cost.clone(), relation: Relation::Ge, rhs: 0.0 });
    let sol = maximize(&LinearProgram { objective: signal_vector(cmdp, Signal::Reward), constraints })?;
    let occupancy = to_table(&sol.x, n, m);
    Ok(CmdpLpSolution {
        j_star: sol.value,
        j_c_star: cost.iter().zip(&sol.x).map(|(c, x)| c * x).sum(),
        slater_margin: delta,
        policy: policy_from_occupancy(&occupancy),
        occupancy,
    })
}

/// `max_pi J_r + lambda J_c` (the dual function of the constrained problem).
pub fn dual_value(cmdp: &TabularCmdp, lambda: f64) -> Result<f64> {
    let objective: Vec<f64> = signal_vector(cmdp, Signal::Reward)
        .iter()
        .zip(signal_vector(cmdp, Signal::Cost))
        .map(|(r, c)| r + lambda * c)
        .collect();
    Ok(maximize(&LinearProgram { objective, constraints: occupancy_polytope(cmdp) })?.value)
}

/// `pi(a|s) = mu(s,a) / sum_a mu(s,a)`; uniform where a state has no mass.
pub fn policy_from_occupancy(occupancy: &[Vec<f64>]) -> PolicyTable {
    occupancy
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 1e-300 {
                row.iter().map(|x| x / total).collect()
            } else {
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect()
}

/// Stationary policy whose occupancy is the uniform average of the given
/// policies' occupancies.
pub fn mixture_policy(cmdp: &TabularCmdp, tables: &[PolicyTable]) -> Result<PolicyTable> {
    if tables.is_empty() {
        return Err(Error::Contract("mixture of zero policies".into()));
    }
    let (n, m) = (cmdp.n_states(), cmdp.n_actions());
    let mut occ = vec![vec![0.0; m]; n];
    for probs in tables {
        let d = stationary_dist(cmdp, probs)?;
        for s in 0..n {
            for a in 0..m {
                occ[s][a] += d[s] * probs[s][a] / tables.len() as f64;
            }
        }
    }
    Ok(policy_from_occupancy(&occ))
}

/// All `m^n` deterministic policies as probability tables.
pub fn deterministic_policies(n_states: usize, n_actions: usize) -> impl Iterator<Item = PolicyTable> {
    let total = (n_actions as u64).pow(n_states as u32);
    (0..total).map(move |mut code| {
        (0..n_states)
            .map(|_| {
                let pick = (code % n_actions as u64) as usize;
                code /= n_actions as u64;
                (0..n_actions).map(|a| if a == pick { 1.0 } else { 0.0 }).collect()
            })
            .collect()
    })
}
