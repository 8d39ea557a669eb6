//! Backward least-squares Monte Carlo solver for the BSDE with jumps
//!
//! ```text
//! Y_t = B + ∫_t^T f(s, Z_s, U_s) ds - ∫_t^T Z_s dW_s - ∫_t^T ∫ U_s(x) Ñ(ds, dx)
//! ```
//!
//! The scheme is explicit: at each step the conditional mean of `Y_{i+1}` and
//! the projections of its residual on the Brownian and compensated-jump
//! increments give `(Ŷ, Z, U)`, and `Y_i = Ŷ + f(t_i, Z_i, U_i) dt_i`.

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::{self, StepDriver, Truncation};
use crate::error::{Error, Result};
use crate::market::{ConstraintSet, MarketSpec, TimeGrid};
use crate::paths::{PathBundle, PricePaths};
use crate::regression::{ordered_sum, ordered_sum_by, RegressionConfig, Regressor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriBounds {
    pub c1: f64,
    pub c2: f64,
    /// Conservative stand-in for the unstated constant of the BMO estimate.
    pub c3_estimate: f64,
}

/// `C1 = -|B|_inf - |theta|^2_inf T / (2a)`, `C2 = |B|_inf`.
pub fn a_priori_bounds(spec: &MarketSpec) -> Result<AprioriBounds> {
    let bnorm = spec.claim.sup_norm()?;
    if !(spec.alpha > 0.0) {
        return Err(Error::Domain(format!(
            "alpha = {} must be positive",
            spec.alpha
        )));
    }
    let th = spec.theta_sup();
    let drift = th * th * spec.horizon / (2.0 * spec.alpha);
    Ok(AprioriBounds {
        c1: -bnorm - drift,
        c2: bnorm,
        c3_estimate: 4.0 * (2.0 * bnorm + drift).powi(2),
    })
}

/// Which generator the backward recursion uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Exact,
    /// Lipschitz truncation `f^m` at level `m >= M`.
    Truncated {
        m: f64,
    },
    /// Infimum over `C ∩ [-m, m]`.
    Constrained {
        m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub max_y: f64,
    pub min_y: f64,
    /// Largest distance of a pre-clamp value outside `[C1, C2]`.
    pub max_bound_excess: f64,
    /// Values moved by the clamp to `[C1 - tol_i, C2 + tol_i]`.
    pub clamped: usize,
    pub u_clamped: usize,
    pub tol: Vec<f64>,
    pub residual_rms: Vec<f64>,
    pub terminal_error: f64,
}

/// Discrete `(Y, Z, U)` on the accepted paths, step-major.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub intensities: Vec<f64>,
    pub generator: Generator,
    /// Compact set the infimum ran over.
    pub constraint: ConstraintSet,
    pub bounds: AprioriBounds,
    /// `[node][path]`.
    pub log_price: Vec<Vec<f64>>,
    /// `[node][path]`, after clamping.
    pub y: Vec<Vec<f64>>,
    /// `[step][path]`.
    pub z: Vec<Vec<f64>>,
    /// `[step][path * marks + j]`.
    pub u: Vec<Vec<f64>>,
    /// Generator values `[step][path]`.
    pub f: Vec<Vec<f64>>,
    pub diagnostics: SolveDiagnostics,
}

impl BsdeSolution {
    pub fn n_paths(&self) -> usize {
        self.y[0].len()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_marks(&self) -> usize {
        self.intensities.len()
    }

    pub fn u_at(&self, step: usize, path: usize) -> &[f64] {
        let j = self.n_marks();
        &self.u[step][path * j..(path + 1) * j]
    }

    pub fn mean_y(&self, node: usize) -> f64 {
        ordered_sum(&self.y[node], |v| v) / self.n_paths() as f64
    }

    /// `Y_0`; all paths share the initial state so this is the path average.
    pub fn y0(&self) -> f64 {
        self.mean_y(0)
    }
}

/// Compact set the generator minimizes over.
pub fn effective_constraint(spec: &MarketSpec, generator: Generator) -> Result<ConstraintSet> {
    match generator {
        Generator::Constrained { m } => spec.constraint.truncate(m),
        _ if spec.constraint.is_compact() => Ok(spec.constraint),
        _ => Err(Error::NonCompact(spec.constraint.describe())),
    }
}

pub(crate) fn truncation_for(spec: &MarketSpec, generator: Generator) -> Result<Truncation> {
    match generator {
        Generator::Truncated { m } => {
            let big_m = driver::truncation_floor(spec)?;
            if m < big_m {
                return Err(Error::TruncationLevel {
                    level: m,
                    min: big_m,
                });
            }
            Ok(Truncation::Levels { m, big_m })
        }
        _ => Ok(Truncation::None),
    }
}

pub fn solve_bsde(
    bundle: &PathBundle,
    prices: &PricePaths,
    spec: &MarketSpec,
    constraint: &ConstraintSet,
    reg: &RegressionConfig,
) -> Result<BsdeSolution> {
    let spec = spec.with_constraint(*constraint);
    solve_bsde_with(bundle, prices, &spec, reg, Generator::Exact)
}

/// Backward recursion with an explicit generator choice. Rejected price
/// paths must be removed beforehand (see `paths::retain_accepted`).
pub fn solve_bsde_with(
    bundle: &PathBundle,
    prices: &PricePaths,
    spec: &MarketSpec,
    reg: &RegressionConfig,
    generator: Generator,
) -> Result<BsdeSolution> {
    let steps = bundle.steps();
    let n = bundle.n_paths();
    let marks = bundle.n_marks();
    if prices.n_paths() != n || prices.steps() != steps {
        return Err(Error::Mismatch(format!(
            "bundle has {n} paths x {steps} steps, prices {} x {}",
            prices.n_paths(),
            prices.steps()
        )));
    }
    if prices.rejected_count() > 0 {
        return Err(Error::Mismatch(format!(
            "{} rejected price paths must be filtered before solving",
            prices.rejected_count()
        )));
    }
    if marks != spec.n_marks() {
        return Err(Error::Mismatch(format!(
            "bundle has {marks} marks, market has {}",
            spec.n_marks()
        )));
    }
    reg.validate().map_err(|m| Error::config("solver", m))?;
    let constraint = effective_constraint(spec, generator)?;
    let truncation = truncation_for(spec, generator)?;
    let bounds = a_priori_bounds(spec)?;
    let grid = bundle.grid().clone();
    let intensities = bundle.intensities().to_vec();

    let log_price: Vec<Vec<f64>> = (0..=steps)
        .map(|i| (0..n).map(|p| prices.price(p, i).ln()).collect())
        .collect();

    let mut y = vec![Vec::new(); steps + 1];
    y[steps] = (0..n)
        .map(|p| spec.claim.payoff(prices.price(p, steps)))
        .collect();
    let mut z = vec![Vec::new(); steps];
    let mut u = vec![Vec::new(); steps];
    let mut f = vec![Vec::new(); steps];
    let mut tol = vec![0.0; steps];
    let mut residual_rms = vec![0.0; steps];
    let mut max_excess = 0.0f64;
    let mut clamped = 0usize;
    let mut u_clamped = 0usize;

    for i in (0..steps).rev() {
        let dt = grid.dt(i);
        let states = &log_price[i];
        let regressor = Regressor::new(states, reg)
            .map_err(|message| Error::Regression { step: i, message })?;
        let next = &y[i + 1];
        // a conditional mean lies in the range of its target; polynomial fits
        // overshoot in the sparse tails of the state distribution
        let (lo_next, hi_next) = next
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let cond: Vec<f64> = regressor
            .fit(states, next)
            .into_iter()
            .map(|v| v.clamp(lo_next, hi_next))
            .collect();
        let resid: Vec<f64> = next.iter().zip(&cond).map(|(a, b)| a - b).collect();

        let zw: Vec<f64> = (0..n).map(|p| resid[p] * bundle.dw(p, i)).collect();
        let zi: Vec<f64> = regressor
            .fit(states, &zw)
            .into_iter()
            .map(|v| v / dt)
            .collect();

        let u_cap = 2.0 * next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut ui = vec![0.0; n * marks];
        for j in 0..marks {
            let scale = intensities[j] * dt;
            let target: Vec<f64> = (0..n).map(|p| resid[p] * bundle.dn_comp(p, i, j)).collect();
            for (p, v) in regressor.fit(states, &target).into_iter().enumerate() {
                let raw = v / scale;
                if raw.abs() > u_cap {
                    u_clamped += 1;
                }
                ui[p * marks + j] = raw.clamp(-u_cap, u_cap);
            }
        }

        let d = StepDriver::new(spec, i, &constraint)?;
        let fi: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| {
                d.eval_with(truncation, zi[p], &ui[p * marks..(p + 1) * marks])
                    .value
            })
            .collect();

        let rms = (ordered_sum(&resid, |r| r * r) / n as f64).sqrt();
        residual_rms[i] = rms;
        let k = regressor.n_basis() as f64;
        tol[i] = 3.0 * rms * (k / n as f64).sqrt() + dt;
        let (lo, hi) = (bounds.c1 - tol[i], bounds.c2 + tol[i]);

        let mut yi = Vec::with_capacity(n);
        for p in 0..n {
            let raw = cond[p] + fi[p] * dt;
            max_excess = max_excess.max(bounds.c1 - raw).max(raw - bounds.c2);
            let v = raw.clamp(lo, hi);
            if v != raw {
                clamped += 1;
            }
            yi.push(v);
        }
        y[i] = yi;
        z[i] = zi;
        u[i] = ui;
        f[i] = fi;
    }

    let (min_y, max_y) = y
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let terminal_error = (0..n)
        .map(|p| (y[steps][p] - spec.claim.payoff(prices.price(p, steps))).abs())
        .fold(0.0, f64::max);
    Ok(BsdeSolution {
        grid,
        intensities,
        generator,
        constraint,
        bounds,
        log_price,
        y,
        z,
        u,
        f,
        diagnostics: SolveDiagnostics {
            max_y,
            min_y,
            max_bound_excess: max_excess.max(0.0),
            clamped,
            u_clamped,
            tol,
            residual_rms,
            terminal_error,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadderMode {
    /// `f^m` with cutoffs on `z` and `u`; `Y^m` increases with `m`.
    CompactTruncation,
    /// Infimum over `C ∩ [-m, m]`; `Y^m` decreases with `m`.
    ConstraintTruncation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderLevel {
    pub m: f64,
    pub y0: f64,
    /// Value at zero initial wealth, `-exp(a Y_0)`.
    pub v0: f64,
    pub sup_mean_abs_dy: f64,
    pub z_l2: f64,
    pub u_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub mode: LadderMode,
    pub levels: Vec<LadderLevel>,
    /// Largest pathwise step against the expected direction.
    pub max_violation: f64,
    pub tolerance: f64,
    pub monotone: bool,
    pub z_strictly_decreasing: bool,
    pub u_strictly_decreasing: bool,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.monotone
    }
}

pub const LADDER_TOL: f64 = 1e-6;

pub fn solve_sequence(
    mode: LadderMode,
    m_values: &[f64],
    bundle: &PathBundle,
    prices: &PricePaths,
    spec: &MarketSpec,
    reg: &RegressionConfig,
) -> Result<(Vec<BsdeSolution>, ConvergenceReport)> {
    if m_values.is_empty() {
        return Err(Error::config("solver.ladder", "need at least one level"));
    }
    if m_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config(
            "solver.ladder",
            "levels must be strictly increasing",
        ));
    }
    if mode == LadderMode::CompactTruncation {
        let big_m = driver::truncation_floor(spec)?;
        if m_values[0] < big_m {
            return Err(Error::TruncationLevel {
                level: m_values[0],
                min: big_m,
            });
        }
    }
    let solutions = m_values
        .iter()
        .map(|&m| {
            let g = match mode {
                LadderMode::CompactTruncation => Generator::Truncated { m },
                LadderMode::ConstraintTruncation => Generator::Constrained { m },
            };
            solve_bsde_with(bundle, prices, spec, reg, g)
        })
        .collect::<Result<Vec<_>>>()?;

    let last = solutions.last().unwrap();
    let n = last.n_paths();
    let grid = &last.grid;
    let levels = solutions
        .iter()
        .zip(m_values)
        .map(|(s, &m)| {
            let sup_dy = (0..=grid.steps())
                .map(|i| ordered_sum_by(n, |p| (s.y[i][p] - last.y[i][p]).abs()) / n as f64)
                .fold(0.0, f64::max);
            let z2: f64 = (0..grid.steps())
                .map(|i| ordered_sum_by(n, |p| (s.z[i][p] - last.z[i][p]).powi(2)) * grid.dt(i))
                .sum::<f64>()
                / n as f64;
            let u2: f64 = (0..grid.steps())
                .map(|i| {
                    ordered_sum_by(n, |p| {
                        s.u_at(i, p)
                            .iter()
                            .zip(last.u_at(i, p))
                            .zip(&s.intensities)
                            .map(|((a, b), nj)| (a - b).powi(2) * nj)
                            .sum()
                    }) * grid.dt(i)
                })
                .sum::<f64>()
                / n as f64;
            let y0 = s.y0();
            LadderLevel {
                m,
                y0,
                v0: -(spec.alpha * y0).exp(),
                sup_mean_abs_dy: sup_dy,
                z_l2: z2.sqrt(),
                u_l2: u2.sqrt(),
            }
        })
        .collect::<Vec<_>>();

    let mut max_violation = 0.0f64;
    for w in solutions.windows(2) {
        let (lower, upper) = match mode {
            LadderMode::CompactTruncation => (&w[0], &w[1]),
            LadderMode::ConstraintTruncation => (&w[1], &w[0]),
        };
        for i in 0..=grid.steps() {
            for p in 0..n {
                max_violation = max_violation.max(lower.y[i][p] - upper.y[i][p]);
            }
        }
    }
    let strictly = |f: fn(&LadderLevel) -> f64| levels.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let report = ConvergenceReport {
        mode,
        z_strictly_decreasing: strictly(|l| l.z_l2),
        u_strictly_decreasing: strictly(|l| l.u_l2),
        levels,
        max_violation,
        tolerance: LADDER_TOL,
        monotone: max_violation <= LADDER_TOL,
    };
    Ok((solutions, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BmoStep {
    pub step: usize,
    pub max_conditional_tail: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BmoReport {
    pub c3_estimate: f64,
    pub steps: Vec<BmoStep>,
}

impl BmoReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }

    pub fn max_tail(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.max_conditional_tail)
            .fold(0.0, f64::max)
    }
}

/// Regression estimate of `E[∫_{t_i}^T |Z|^2 ds + ∫∫ |U|^2 n(dx) ds | F_{t_i}]`
/// at every grid time, against the heuristic constant `C3`.
pub fn bmo_diagnostic(solution: &BsdeSolution, reg: &RegressionConfig) -> Result<BmoReport> {
    let n = solution.n_paths();
    let steps = solution.steps();
    let mut tail = vec![0.0; n];
    let mut out = Vec::with_capacity(steps);
    for i in (0..steps).rev() {
        let dt = solution.grid.dt(i);
        for (p, t) in tail.iter_mut().enumerate() {
            let jumps: f64 = solution
                .u_at(i, p)
                .iter()
                .zip(&solution.intensities)
                .map(|(u, nj)| u * u * nj)
                .sum();
            *t += (solution.z[i][p].powi(2) + jumps) * dt;
        }
        let states = &solution.log_price[i];
        let r = Regressor::new(states, reg)
            .map_err(|message| Error::Regression { step: i, message })?;
        let cond = r.fit(states, &tail);
        let max = cond.iter().cloned().fold(0.0, f64::max);
        out.push(BmoStep {
            step: i,
            max_conditional_tail: max,
            pass: max <= solution.bounds.c3_estimate,
        });
    }
    out.reverse();
    Ok(BmoReport {
        c3_estimate: solution.bounds.c3_estimate,
        steps: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEquivalenceReport {
    pub k: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub checked: usize,
    pub violations: usize,
    pub worst_ratio_low: f64,
    pub worst_ratio_high: f64,
}

impl NormEquivalenceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Pointwise `c1 ||U||^2_{L2(n)} <= |U|_a <= c2 ||U||^2_{L2(n)}` with
/// `K = 2 max|Y|` and `c1, c2` the extreme values of `g_a(y)/y^2` on `[-K, K]`.
pub fn norm_equivalence_check(solution: &BsdeSolution, alpha: f64) -> NormEquivalenceReport {
    let max_abs_y = solution
        .diagnostics
        .max_y
        .abs()
        .max(solution.diagnostics.min_y.abs());
    let k = 2.0 * max_abs_y;
    let half = alpha / 2.0;
    let (c_lower, c_upper) = if k > 0.0 {
        let a = driver::g(alpha, k) / (k * k);
        let b = driver::g(alpha, -k) / (k * k);
        (a.min(b).min(half), a.max(b).max(half))
    } else {
        (half, half)
    };
    let mut violations = 0;
    let mut checked = 0;
    let mut lo_ratio = f64::INFINITY;
    let mut hi_ratio = 0.0f64;
    for i in 0..solution.steps() {
        for p in 0..solution.n_paths() {
            let (mut l2, mut pen) = (0.0, 0.0);
            for (u, nj) in solution.u_at(i, p).iter().zip(&solution.intensities) {
                l2 += u * u * nj;
                pen += driver::g(alpha, *u) * nj;
            }
            checked += 1;
            let slack = 1e-12 * (1.0 + pen);
            if pen < c_lower * l2 - slack || pen > c_upper * l2 + slack {
                violations += 1;
            }
            if l2 > 0.0 {
                lo_ratio = lo_ratio.min(pen / l2);
                hi_ratio = hi_ratio.max(pen / l2);
            }
        }
    }
    NormEquivalenceReport {
        k,
        c_lower,
        c_upper,
        checked,
        violations,
        worst_ratio_low: if lo_ratio.is_finite() {
            lo_ratio
        } else {
            c_lower
        },
        worst_ratio_high: if hi_ratio > 0.0 { hi_ratio } else { c_upper },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub lipschitz: f64,
    pub c0: f64,
    pub k: f64,
    pub violations: usize,
    pub worst_ratio: f64,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub const DEFAULT_LIPSCHITZ_C0: f64 = 8.0;

/// `|Y_t|^2 <= K(L, T) E[|B|^2 + (∫_t^T |f(s,0,0)| ds)^2 | F_t]` with
/// `K(L, T) = C0 exp(4 L^2 T)`. The generator at the origin is deterministic
/// here, so only the claim term needs a regression.
pub fn lipschitz_bound_diagnostic(
    solution: &BsdeSolution,
    spec: &MarketSpec,
    lipschitz: f64,
    c0: f64,
    reg: &RegressionConfig,
) -> Result<LipschitzReport> {
    let steps = solution.steps();
    let truncation = truncation_for(spec, solution.generator)?;
    let zeros = vec![0.0; solution.n_marks()];
    let mut at_origin = vec![0.0; steps];
    for (i, v) in at_origin.iter_mut().enumerate() {
        let d = StepDriver::new(spec, i, &solution.constraint)?;
        *v = d.eval_with(truncation, 0.0, &zeros).value.abs() * solution.grid.dt(i);
    }
    let k = c0 * (4.0 * lipschitz * lipschitz * solution.grid.horizon()).exp();
    let b2: Vec<f64> = solution.y[steps].iter().map(|b| b * b).collect();
    let mut violations = 0;
    let mut worst = 0.0f64;
    for i in 0..=steps {
        let integral: f64 = at_origin[i..].iter().sum();
        let cond_b2 = if i == steps {
            b2.clone()
        } else {
            let states = &solution.log_price[i];
            Regressor::new(states, reg)
                .map_err(|message| Error::Regression { step: i, message })?
                .fit(states, &b2)
        };
        for (y, cb) in solution.y[i].iter().zip(&cond_b2) {
            let lhs = y * y;
            let rhs = k * (cb.max(0.0) + integral * integral);
            if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
                violations += 1;
            }
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            }
        }
    }
    Ok(LipschitzReport {
        lipschitz,
        c0,
        k,
        violations,
        worst_ratio: worst,
    })
}
