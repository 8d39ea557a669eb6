//! Scenario-tree ground truth where every conditional expectation is a
//! finite sum.
//!
//! Each step branches on a Brownian proxy `±sqrt(dt)` (probability 1/2 each)
//! crossed with either no jump or a single jump of one mark.

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::StepDriver;
use crate::error::{Error, Result};
use crate::golden;
use crate::market::{Claim, ConstraintSet, MarketSpec, TimeGrid};

pub const MAX_DEPTH: usize = 8;
/// Largest total jump probability per step.
pub const MAX_JUMP_MASS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Branch {
    pub prob: f64,
    pub dw: f64,
    pub mark: Option<usize>,
}

/// Full non-recombining tree; level `k` holds `branches^k` nodes and node
/// `q` at level `k` has children `q * branches + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub spec: MarketSpec,
    pub grid: TimeGrid,
    pub branches: Vec<Branch>,
    /// Relative price returns `[level][child]` of the step leaving that level.
    returns: Vec<Vec<f64>>,
    /// `[level][node]`.
    pub log_price: Vec<Vec<f64>>,
    /// Path probability `[level][node]`.
    pub prob: Vec<Vec<f64>>,
}

impl TreeModel {
    pub fn new(spec: &MarketSpec, depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(Error::InvalidTree(format!(
                "depth {depth} outside 1..={MAX_DEPTH}"
            )));
        }
        spec.validate(Some(depth))?;
        let grid = TimeGrid::uniform(depth, spec.horizon)?;
        let dt = grid.dt(0);
        let mass: f64 = spec.intensities.iter().sum::<f64>() * dt;
        if mass > MAX_JUMP_MASS {
            return Err(Error::InvalidTree(format!(
                "jump probability {mass} per step exceeds {MAX_JUMP_MASS}"
            )));
        }
        let sq = dt.sqrt();
        let mut branches = Vec::new();
        for eps in [-1.0, 1.0] {
            branches.push(Branch {
                prob: 0.5 * (1.0 - mass),
                dw: eps * sq,
                mark: None,
            });
            for (j, &n) in spec.intensities.iter().enumerate() {
                branches.push(Branch {
                    prob: 0.5 * n * dt,
                    dw: eps * sq,
                    mark: Some(j),
                });
            }
        }
        let mut returns = Vec::with_capacity(depth);
        for i in 0..depth {
            let row: Vec<f64> = branches
                .iter()
                .map(|br| {
                    let mut r = spec.b_at(i) * dt + spec.sigma_at(i) * br.dw;
                    for (j, beta) in spec.beta.iter().enumerate() {
                        let dn = if br.mark == Some(j) { 1.0 } else { 0.0 };
                        r += beta.at(i) * (dn - spec.intensities[j] * dt);
                    }
                    r
                })
                .collect();
            if let Some(c) = row.iter().position(|&r| !(1.0 + r > 0.0)) {
                return Err(Error::InvalidTree(format!(
                    "price factor {} at step {i}, branch {c} is not positive",
                    1.0 + row[c]
                )));
            }
            returns.push(row);
        }
        let nb = branches.len();
        let mut log_price = vec![vec![spec.s0.ln()]];
        let mut prob = vec![vec![1.0]];
        for i in 0..depth {
            let (lp, pr) = (&log_price[i], &prob[i]);
            let mut nl = Vec::with_capacity(lp.len() * nb);
            let mut np = Vec::with_capacity(lp.len() * nb);
            for q in 0..lp.len() {
                for (c, br) in branches.iter().enumerate() {
                    nl.push(lp[q] + returns[i][c].ln_1p());
                    np.push(pr[q] * br.prob);
                }
            }
            log_price.push(nl);
            prob.push(np);
        }
        Ok(TreeModel {
            spec: spec.clone(),
            grid,
            branches,
            returns,
            log_price,
            prob,
        })
    }

    pub fn depth(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt(0)
    }

    pub fn returns(&self, level: usize) -> &[f64] {
        &self.returns[level]
    }

    pub fn nodes(&self, level: usize) -> usize {
        self.log_price[level].len()
    }

    /// Largest deviation of branch probabilities from 1, of leaf mass from 1
    /// and of the one-step mean price ratio from `1 + b dt`.
    pub fn consistency_error(&self) -> f64 {
        let local = (self.branches.iter().map(|b| b.prob).sum::<f64>() - 1.0).abs();
        let leaf = (self.prob[self.depth()].iter().sum::<f64>() - 1.0).abs();
        let drift = (0..self.depth())
            .map(|i| {
                let m: f64 = self
                    .branches
                    .iter()
                    .zip(&self.returns[i])
                    .map(|(b, r)| b.prob * r)
                    .sum();
                (m - self.spec.b_at(i) * self.dt()).abs()
            })
            .fold(0.0, f64::max);
        local.max(leaf).max(drift)
    }

    fn payoffs(&self, claim: &Claim) -> Vec<f64> {
        self.log_price[self.depth()]
            .iter()
            .map(|lp| claim.payoff(lp.exp()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionGrid {
    pub values: Vec<f64>,
}

impl ActionGrid {
    pub fn uniform(constraint: &ConstraintSet, count: usize) -> Result<Self> {
        let (lo, hi) = constraint.bounds()?;
        if count == 0 {
            return Err(Error::config(
                "oracle.actions",
                "action grid needs at least one point",
            ));
        }
        let values = if count == 1 || lo == hi {
            vec![lo]
        } else {
            (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect()
        };
        Ok(ActionGrid { values })
    }

    pub fn spacing(&self) -> f64 {
        if self.values.len() < 2 {
            0.0
        } else {
            (self.values[self.values.len() - 1] - self.values[0]) / (self.values.len() - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpResult {
    pub value: f64,
    /// `E[exp(-a(X_T - X_t) + a B)]` under the best policy, `[level][node]`.
    pub w: Vec<Vec<f64>>,
    /// Best action `[level][node]` for the internal levels.
    pub actions: Vec<Vec<f64>>,
}

impl DpResult {
    /// Certainty equivalent `log(W_0) / a`, the tree counterpart of `Y_0`.
    pub fn y0(&self, alpha: f64) -> f64 {
        self.w[0][0].ln() / alpha
    }
}

/// Backward induction over Markov feedback policies taking values in the
/// action grid. Exponential utility factors wealth out, so the recursion runs
/// on `W = E[exp(-a pi·r + a B)]` and `V = -exp(-a x0) W_0`.
pub fn dp_value(
    tree: &TreeModel,
    actions: &ActionGrid,
    alpha: f64,
    claim: &Claim,
    x0: f64,
) -> Result<DpResult> {
    if actions.values.is_empty() {
        return Err(Error::config("oracle.actions", "action grid is empty"));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
    }
    let depth = tree.depth();
    let nb = tree.n_branches();
    let mut w = vec![Vec::new(); depth + 1];
    let mut best = vec![Vec::new(); depth];
    w[depth] = tree
        .payoffs(claim)
        .into_iter()
        .map(|b| (alpha * b).exp())
        .collect();
    for i in (0..depth).rev() {
        let rets = tree.returns(i);
        let next = &w[i + 1];
        let (vals, acts): (Vec<f64>, Vec<f64>) = (0..tree.nodes(i))
            .into_par_iter()
            .map(|q| {
                let mut top = (f64::INFINITY, actions.values[0]);
                for &pi in &actions.values {
                    let e: f64 = (0..nb)
                        .map(|c| {
                            tree.branches[c].prob * (-alpha * pi * rets[c]).exp() * next[q * nb + c]
                        })
                        .sum();
                    if e < top.0 {
                        top = (e, pi);
                    }
                }
                top
            })
            .unzip();
        w[i] = vals;
        best[i] = acts;
    }
    Ok(DpResult {
        value: -(-alpha * x0).exp() * w[0][0],
        w,
        actions: best,
    })
}

/// Per-node `(Y, Z, U, pi*)` of the tree BSDE.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeBsde {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    /// `[level][node * marks + j]`.
    pub u: Vec<Vec<f64>>,
    /// Generator minimizer at each internal node.
    pub pi: Vec<Vec<f64>>,
}

impl TreeBsde {
    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }
}

/// Explicit backward scheme with exact conditional expectations:
/// `Y = E[Y'] + f(t, Z, U) dt` where `Z` and `U` are the coefficients of the
/// projection of `Y'` on the Brownian and compensated jump increments.
pub fn tree_bsde(tree: &TreeModel, constraint: &ConstraintSet, claim: &Claim) -> Result<TreeBsde> {
    let depth = tree.depth();
    let nb = tree.n_branches();
    let marks = tree.spec.n_marks();
    let dt = tree.dt();
    let p: Vec<f64> = tree.spec.intensities.iter().map(|n| n * dt).collect();
    let p_total: f64 = p.iter().sum();
    let mut y = vec![Vec::new(); depth + 1];
    let mut z = vec![Vec::new(); depth];
    let mut u = vec![Vec::new(); depth];
    let mut pi = vec![Vec::new(); depth];
    y[depth] = tree.payoffs(claim);
    for i in (0..depth).rev() {
        let d = StepDriver::new(&tree.spec, i, constraint)?;
        let next = &y[i + 1];
        let rows: Vec<(f64, f64, Vec<f64>, f64)> = (0..tree.nodes(i))
            .into_par_iter()
            .map(|q| {
                let kids = &next[q * nb..(q + 1) * nb];
                let mut mean = 0.0;
                let mut zw = 0.0;
                let mut cov = vec![0.0; marks];
                for (c, br) in tree.branches.iter().enumerate() {
                    mean += br.prob * kids[c];
                    zw += br.prob * kids[c] * br.dw;
                }
                for (c, br) in tree.branches.iter().enumerate() {
                    if let Some(j) = br.mark {
                        cov[j] += br.prob * (kids[c] - mean);
                    }
                }
                // inverse of diag(p) - p p^T by Sherman-Morrison
                let s: f64 = cov.iter().sum::<f64>() / (1.0 - p_total);
                let uq: Vec<f64> = cov.iter().zip(&p).map(|(c, pj)| c / pj + s).collect();
                let zq = zw / dt;
                let e = d.eval(zq, &uq);
                (mean + e.value * dt, zq, uq, e.minimizer)
            })
            .collect();
        y[i] = rows.iter().map(|r| r.0).collect();
        z[i] = rows.iter().map(|r| r.1).collect();
        u[i] = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
        pi[i] = rows.iter().map(|r| r.3).collect();
    }
    Ok(TreeBsde { y, z, u, pi })
}

/// Exact discrete certainty equivalent over the whole constraint set:
/// `exp(a Y) = min_{pi in C} E[exp(-a pi r + a Y')]`, solved per node by
/// golden-section search (the objective is convex in `pi`).
pub fn tree_certainty_equivalent(
    tree: &TreeModel,
    constraint: &ConstraintSet,
    claim: &Claim,
) -> Result<TreeBsde> {
    let (lo, hi) = constraint.bounds()?;
    let alpha = tree.spec.alpha;
    let depth = tree.depth();
    let nb = tree.n_branches();
    let mut y = vec![Vec::new(); depth + 1];
    let mut pi = vec![Vec::new(); depth];
    y[depth] = tree.payoffs(claim);
    for i in (0..depth).rev() {
        let rets = tree.returns(i);
        let next = &y[i + 1];
        let rows: Vec<(f64, f64)> = (0..tree.nodes(i))
            .into_par_iter()
            .map(|q| {
                let kids = &next[q * nb..(q + 1) * nb];
                let shift = kids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let obj = |a: f64| -> f64 {
                    (0..nb)
                        .map(|c| {
                            tree.branches[c].prob
                                * (-alpha * a * rets[c] + alpha * (kids[c] - shift)).exp()
                        })
                        .sum()
                };
                let (a, e) = golden::minimize(obj, lo, hi, golden::DEFAULT_XTOL);
                (shift + e.ln() / alpha, a)
            })
            .collect();
        y[i] = rows.iter().map(|r| r.0).collect();
        pi[i] = rows.iter().map(|r| r.1).collect();
    }
    Ok(TreeBsde {
        y,
        z: vec![Vec::new(); depth],
        u: vec![Vec::new(); depth],
        pi,
    })
}

/// Exact conditional drift of `R^pi = -exp(-a (X^pi - Y))` at every internal
/// node, normalized by `|R|`: `1 - E[exp(-a pi r + a (Y' - Y))]`.
pub fn tree_drifts<P>(tree: &TreeModel, y: &[Vec<f64>], policy: P) -> Vec<Vec<f64>>
where
    P: Fn(usize, usize) -> f64 + Sync,
{
    let alpha = tree.spec.alpha;
    let nb = tree.n_branches();
    (0..tree.depth())
        .map(|i| {
            let rets = tree.returns(i);
            (0..tree.nodes(i))
                .into_par_iter()
                .map(|q| {
                    let a = policy(i, q);
                    let e: f64 = (0..nb)
                        .map(|c| {
                            tree.branches[c].prob
                                * (-alpha * a * rets[c] + alpha * (y[i + 1][q * nb + c] - y[i][q]))
                                    .exp()
                        })
                        .sum();
                    1.0 - e
                })
                .collect()
        })
        .collect()
}

/// Headline numbers of one method, tagged with the market they came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub spec: MarketSpec,
    pub x0: f64,
    pub v0: f64,
    pub y0: f64,
    pub pi0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub v0: f64,
    pub y0: f64,
    pub pi0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub abs: f64,
    pub rel: f64,
    pub pass: bool,
}

impl Gap {
    fn new(a: f64, b: f64, tol: f64) -> Gap {
        let abs = (a - b).abs();
        let rel = if b != 0.0 { abs / b.abs() } else { abs };
        Gap {
            abs,
            rel,
            pass: abs <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub v0: Gap,
    pub y0: Gap,
    pub pi0: Gap,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.v0.pass && self.y0.pass && self.pi0.pass
    }
}

pub fn compare(
    solver: &MethodSummary,
    oracle: &MethodSummary,
    tol: &Tolerances,
) -> Result<CompareReport> {
    if solver.spec.alpha != oracle.spec.alpha {
        return Err(Error::Mismatch(format!(
            "alpha {} vs {}",
            solver.spec.alpha, oracle.spec.alpha
        )));
    }
    if solver.spec != oracle.spec {
        return Err(Error::Mismatch(
            "results come from different markets".into(),
        ));
    }
    if solver.x0 != oracle.x0 {
        return Err(Error::Mismatch(format!(
            "x0 {} vs {}",
            solver.x0, oracle.x0
        )));
    }
    Ok(CompareReport {
        v0: Gap::new(solver.v0, oracle.v0, tol.v0),
        y0: Gap::new(solver.y0, oracle.y0, tol.y0),
        pi0: Gap::new(solver.pi0, oracle.pi0, tol.pi0),
    })
}
