//! Optimal strategy, value function and the `R^pi` verification process.

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::StepDriver;
use crate::error::{Error, Result};
use crate::market::{ConstraintSet, MarketSpec};
use crate::paths::WealthPaths;
use crate::regression::{ordered_sum_by, RegressionConfig, Regressor};
use crate::solver::{truncation_for, BsdeSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Optimal,
    UserSupplied,
}

/// Positions `[step][path]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyPath {
    pub values: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl StrategyPath {
    pub fn constant(
        pi: f64,
        steps: usize,
        paths: usize,
        constraint: &ConstraintSet,
    ) -> Result<Self> {
        if !constraint.contains(pi) {
            return Err(Error::ConstraintViolation {
                step: 0,
                path: 0,
                value: pi,
                set: constraint.describe(),
            });
        }
        Ok(StrategyPath {
            values: vec![vec![pi; paths]; steps],
            provenance: Provenance::UserSupplied,
        })
    }

    /// `(mean, min, max)` at one step.
    pub fn stats(&self, step: usize) -> (f64, f64, f64) {
        let row = &self.values[step];
        let mean = ordered_sum_by(row.len(), |p| row[p]) / row.len() as f64;
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        (mean, lo, hi)
    }
}

/// Minimizer of the generator at the solved `(Z_i, U_i)` on every path,
/// with the same truncation the solve used.
pub fn optimal_strategy(
    solution: &BsdeSolution,
    spec: &MarketSpec,
    constraint: &ConstraintSet,
) -> Result<StrategyPath> {
    let truncation = truncation_for(spec, solution.generator)?;
    let values = (0..solution.steps())
        .map(|i| {
            let d = StepDriver::new(spec, i, constraint)?;
            Ok((0..solution.n_paths())
                .into_par_iter()
                .map(|p| {
                    d.eval_with(truncation, solution.z[i][p], solution.u_at(i, p))
                        .minimizer
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(StrategyPath {
        values,
        provenance: Provenance::Optimal,
    })
}

/// `V_t(x) = -exp(-a (x - Y_t))`.
pub fn value_function(y: f64, x: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
    }
    Ok(-(-alpha * (x - y)).exp())
}

/// `R = -exp(-a (X - Y))` with `R_k = R_0 Mtilde_k exp(A_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RProcess {
    pub alpha: f64,
    /// `[node][path]`.
    pub r: Vec<Vec<f64>>,
    /// Cumulative exponent `[node][path]`.
    pub a: Vec<Vec<f64>>,
    /// Per-step increments `[step][path]`.
    pub a_increments: Vec<Vec<f64>>,
    /// `[node][path]`, starting at 1.
    pub mtilde: Vec<Vec<f64>>,
}

impl RProcess {
    pub fn steps(&self) -> usize {
        self.a_increments.len()
    }

    pub fn n_paths(&self) -> usize {
        self.r[0].len()
    }

    /// Largest relative gap between `R` and its multiplicative decomposition.
    pub fn reconstruction_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.r.len() {
            for p in 0..self.n_paths() {
                let rebuilt = self.r[0][p] * self.mtilde[k][p] * self.a[k][p].exp();
                worst = worst.max(((rebuilt - self.r[k][p]) / self.r[k][p]).abs());
            }
        }
        worst
    }

    pub fn min_increment(&self) -> f64 {
        self.a_increments
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_increment(&self) -> f64 {
        self.a_increments
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Path average of the normalized exponential factor at the last node.
    pub fn mean_terminal_mtilde(&self) -> f64 {
        let last = &self.mtilde[self.steps()];
        ordered_sum_by(last.len(), |p| last[p]) / last.len() as f64
    }
}

pub fn r_process(
    strategy: &StrategyPath,
    solution: &BsdeSolution,
    spec: &MarketSpec,
    wealth: &WealthPaths,
) -> Result<RProcess> {
    let steps = solution.steps();
    let n = solution.n_paths();
    if strategy.values.len() != steps || wealth.values.len() != steps + 1 {
        return Err(Error::LengthMismatch {
            what: "strategy or wealth steps",
            expected: steps,
            actual: strategy.values.len(),
        });
    }
    for (i, row) in strategy.values.iter().enumerate() {
        if row.len() != n || wealth.values[i].len() != n {
            return Err(Error::LengthMismatch {
                what: "strategy or wealth paths",
                expected: n,
                actual: row.len(),
            });
        }
        if let Some(p) = row.iter().position(|&v| !solution.constraint.contains(v)) {
            return Err(Error::ConstraintViolation {
                step: i,
                path: p,
                value: row[p],
                set: solution.constraint.describe(),
            });
        }
    }
    let alpha = spec.alpha;
    let r: Vec<Vec<f64>> = (0..=steps)
        .map(|i| {
            (0..n)
                .map(|p| -(-alpha * (wealth.values[i][p] - solution.y[i][p])).exp())
                .collect()
        })
        .collect();
    let mut a_increments = Vec::with_capacity(steps);
    for i in 0..steps {
        let d = StepDriver::new(spec, i, &solution.constraint)?;
        let dt = solution.grid.dt(i);
        let row: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| {
                d.a_integrand(
                    strategy.values[i][p],
                    solution.z[i][p],
                    solution.u_at(i, p),
                    solution.f[i][p],
                ) * dt
            })
            .collect();
        a_increments.push(row);
    }
    let mut a = vec![vec![0.0; n]];
    let mut mtilde = vec![vec![1.0; n]];
    for i in 0..steps {
        let next_a = (0..n).map(|p| a[i][p] + a_increments[i][p]).collect();
        let next_m = (0..n)
            .map(|p| mtilde[i][p] * (r[i + 1][p] / r[i][p]) * (-a_increments[i][p]).exp())
            .collect();
        a.push(next_a);
        mtilde.push(next_m);
    }
    Ok(RProcess {
        alpha,
        r,
        a,
        a_increments,
        mtilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleClaim {
    Supermartingale,
    Martingale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftStep {
    pub step: usize,
    /// Path average of `(R_{i+1} - R_i) / |R_i|`.
    pub mean_drift: f64,
    pub band: f64,
    /// Extremes of the regression estimate of the conditional drift.
    pub min_conditional: f64,
    pub max_conditional: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub claim: MartingaleClaim,
    pub band_width: f64,
    pub steps: Vec<DriftStep>,
}

impl MartingaleReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }

    /// Steps whose drift sits below minus the band.
    pub fn significantly_negative(&self) -> usize {
        self.steps.iter().filter(|s| s.mean_drift < -s.band).count()
    }
}

/// CLT band width in standard errors.
pub const DRIFT_BAND: f64 = 4.0;

/// Drift of `R` per step, normalized by `|R_i|` so the wealth level drops out.
/// A supermartingale passes when the drift is below the band, a martingale
/// when it lies inside it.
pub fn martingale_test(
    r: &RProcess,
    solution: &BsdeSolution,
    reg: &RegressionConfig,
    claim: MartingaleClaim,
) -> Result<MartingaleReport> {
    let n = r.n_paths();
    let mut steps = Vec::with_capacity(r.steps());
    for i in 0..r.steps() {
        let inc: Vec<f64> = (0..n)
            .map(|p| (r.r[i + 1][p] - r.r[i][p]) / r.r[i][p].abs())
            .collect();
        let mean = ordered_sum_by(n, |p| inc[p]) / n as f64;
        let var = ordered_sum_by(n, |p| (inc[p] - mean).powi(2)) / (n.max(2) - 1) as f64;
        let band = DRIFT_BAND * (var / n as f64).sqrt() + 1e-12 * (1.0 + mean.abs());
        let states = &solution.log_price[i];
        let fit = Regressor::new(states, reg)
            .map_err(|message| Error::Regression { step: i, message })?
            .fit(states, &inc);
        let (lo, hi) = fit
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let pass = match claim {
            MartingaleClaim::Supermartingale => mean <= band,
            MartingaleClaim::Martingale => mean.abs() <= band,
        };
        steps.push(DriftStep {
            step: i,
            mean_drift: mean,
            band,
            min_conditional: lo,
            max_conditional: hi,
            pass,
        });
    }
    Ok(MartingaleReport {
        claim,
        band_width: DRIFT_BAND,
        steps,
    })
}
