//! The quadratic jump generator
//!
//! ```text
//! f(s, z, u) = inf_{pi in C} [ a/2 |pi sigma - (z + theta/a)|^2 + |u - pi beta|_a ]
//!              - theta z - theta^2 / (2a)
//! ```
//!
//! with the entropic jump penalty `|u|_a = sum_j g_a(u_j) n_j` and
//! `g_a(y) = (exp(a y) - a y - 1) / a`, together with its Lipschitz
//! truncations and the structural coefficients used to check growth and
//! increment conditions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::golden;
use crate::market::{ConstraintSet, JumpSpec, MarketSpec};
use crate::solver::a_priori_bounds;

/// `g_a(y)` without the domain check; `expm1` keeps it accurate near zero.
#[inline]
pub(crate) fn g(alpha: f64, y: f64) -> f64 {
    let ay = alpha * y;
    (ay.exp_m1() - ay) / alpha
}

/// `g_a'(y) = exp(a y) - 1`.
#[inline]
pub(crate) fn g_prime(alpha: f64, y: f64) -> f64 {
    (alpha * y).exp_m1()
}

pub fn g_alpha(alpha: f64, y: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
    }
    Ok(g(alpha, y))
}

/// `|u|_a = sum_j g_a(u_j) n_j`.
pub fn jump_penalty(alpha: f64, u: &[f64], jumps: &JumpSpec) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
    }
    if u.len() != jumps.len() {
        return Err(Error::LengthMismatch {
            what: "jump integrand",
            expected: jumps.len(),
            actual: u.len(),
        });
    }
    Ok(u.iter()
        .zip(jumps.intensities())
        .map(|(&uj, &n)| g(alpha, uj) * n)
        .sum())
}

/// C¹ cutoff: 1 on `|x| <= m`, 0 on `|x| >= m + 1`, cubic smoothstep between.
pub fn rho(m: f64, x: f64) -> f64 {
    let s = x.abs() - m;
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        1.0 - 3.0 * s * s + 2.0 * s * s * s
    }
}

/// Largest slope of `rho`.
const RHO_SLOPE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriverEval {
    pub value: f64,
    pub minimizer: f64,
    pub quadratic_part: f64,
    pub jump_part: f64,
    pub affine_part: f64,
}

/// Truncation applied inside the infimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    None,
    /// `rho_m(z)` on the quadratic term and `rho_M(u_j)` on each jump atom.
    Levels {
        m: f64,
        big_m: f64,
    },
}

/// Coefficients of the generator frozen at one time step, over a compact set.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDriver {
    pub alpha: f64,
    pub b: f64,
    pub sigma: f64,
    pub theta: f64,
    pub beta: Vec<f64>,
    pub intensities: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    jump_free: bool,
}

impl StepDriver {
    pub fn new(spec: &MarketSpec, step: usize, constraint: &ConstraintSet) -> Result<Self> {
        let (lo, hi) = constraint.bounds()?;
        let beta = spec.beta_at(step);
        if beta.len() != spec.intensities.len() {
            return Err(Error::LengthMismatch {
                what: "beta loadings",
                expected: spec.intensities.len(),
                actual: beta.len(),
            });
        }
        let jump_free = beta.iter().all(|&b| b == 0.0);
        Ok(StepDriver {
            alpha: spec.alpha,
            b: spec.b_at(step),
            sigma: spec.sigma_at(step),
            theta: spec.theta_at(step),
            beta,
            intensities: spec.intensities.clone(),
            lo,
            hi,
            jump_free,
        })
    }

    pub fn n_marks(&self) -> usize {
        self.intensities.len()
    }

    pub fn sup_abs_pi(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    #[inline]
    fn quadratic(&self, pi: f64, z: f64) -> f64 {
        let d = pi * self.sigma - (z + self.theta / self.alpha);
        0.5 * self.alpha * d * d
    }

    #[inline]
    fn jumps(&self, pi: f64, u: &[f64], weights: Option<&[f64]>) -> f64 {
        let mut s = 0.0;
        for j in 0..u.len() {
            let w = weights.map_or(1.0, |w| w[j]);
            if w != 0.0 {
                s += g(self.alpha, u[j] - pi * self.beta[j]) * self.intensities[j] * w;
            }
        }
        s
    }

    /// Objective inside the infimum, without the affine part.
    pub fn objective(&self, pi: f64, z: f64, u: &[f64]) -> f64 {
        self.quadratic(pi, z) + self.jumps(pi, u, None)
    }

    pub fn affine(&self, z: f64) -> f64 {
        -self.theta * z - self.theta * self.theta / (2.0 * self.alpha)
    }

    pub fn eval(&self, z: f64, u: &[f64]) -> DriverEval {
        self.eval_with(Truncation::None, z, u)
    }

    pub fn eval_with(&self, trunc: Truncation, z: f64, u: &[f64]) -> DriverEval {
        debug_assert_eq!(u.len(), self.n_marks());
        let (zw, uw) = match trunc {
            Truncation::None => (1.0, None),
            Truncation::Levels { m, big_m } => {
                let w: Vec<f64> = u.iter().map(|&x| rho(big_m, x)).collect();
                (rho(m, z), Some(w))
            }
        };
        let uw = uw.as_deref();
        let has_jumps = !self.jump_free && uw.is_none_or(|w| w.iter().any(|&x| x != 0.0));
        let pi = if !has_jumps {
            if zw > 0.0 && self.sigma > 0.0 {
                ((z + self.theta / self.alpha) / self.sigma).clamp(self.lo, self.hi)
            } else {
                self.lo
            }
        } else {
            let obj = |p: f64| zw * self.quadratic(p, z) + self.jumps(p, u, uw);
            golden::minimize(obj, self.lo, self.hi, golden::DEFAULT_XTOL).0
        };
        let quadratic_part = zw * self.quadratic(pi, z);
        let jump_part = self.jumps(pi, u, uw);
        let affine_part = self.affine(z);
        DriverEval {
            value: quadratic_part + jump_part + affine_part,
            minimizer: pi,
            quadratic_part,
            jump_part,
            affine_part,
        }
    }

    /// Integrand of the finite-variation exponent of `R^pi`:
    /// `a [ objective(pi) + affine - f ]`, zero at the minimizer.
    pub fn a_integrand(&self, pi: f64, z: f64, u: &[f64], f: f64) -> f64 {
        let d = pi * self.sigma - z;
        let mut jump = 0.0;
        for ((uj, bj), nj) in u.iter().zip(&self.beta).zip(&self.intensities) {
            let y = self.alpha * (pi * bj - uj);
            jump += ((-y).exp_m1() + y) * nj;
        }
        0.5 * self.alpha * self.alpha * d * d - self.alpha * (pi * self.b + f) + jump
    }
}

pub fn driver_eval(
    t_index: usize,
    z: f64,
    u: &[f64],
    spec: &MarketSpec,
    constraint: &ConstraintSet,
) -> Result<DriverEval> {
    let d = StepDriver::new(spec, t_index, constraint)?;
    check_len(u, d.n_marks())?;
    Ok(d.eval(z, u))
}

/// Smallest admissible truncation level `M = 2(|C1| + |C2|)`.
pub fn truncation_floor(spec: &MarketSpec) -> Result<f64> {
    let b = a_priori_bounds(spec)?;
    Ok(2.0 * (b.c1.abs() + b.c2.abs()))
}

pub fn driver_truncated(
    m: f64,
    t_index: usize,
    z: f64,
    u: &[f64],
    spec: &MarketSpec,
    constraint: &ConstraintSet,
) -> Result<DriverEval> {
    let big_m = truncation_floor(spec)?;
    if m < big_m {
        return Err(Error::TruncationLevel {
            level: m,
            min: big_m,
        });
    }
    let d = StepDriver::new(spec, t_index, constraint)?;
    check_len(u, d.n_marks())?;
    Ok(d.eval_with(Truncation::Levels { m, big_m }, z, u))
}

fn check_len(u: &[f64], n: usize) -> Result<()> {
    if u.len() != n {
        return Err(Error::LengthMismatch {
            what: "jump integrand",
            expected: n,
            actual: u.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Violation {
    pub z: f64,
    pub u: Vec<f64>,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    pub checked: usize,
    pub zero_in_set: bool,
    pub violations: Vec<H1Violation>,
}

impl H1Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Growth sandwich `-theta z - theta^2/(2a) <= f(z,u) <= a/2 z^2 + |u|_a`
/// at each sample point. The upper bound relies on `0 ∈ C`.
pub fn check_h1(
    spec: &MarketSpec,
    constraint: &ConstraintSet,
    t_index: usize,
    points: &[(f64, Vec<f64>)],
) -> Result<H1Report> {
    let d = StepDriver::new(spec, t_index, constraint)?;
    let jumps = spec.jumps()?;
    let mut violations = Vec::new();
    for (z, u) in points {
        check_len(u, d.n_marks())?;
        let f = d.eval(*z, u).value;
        let lower = d.affine(*z);
        let upper = 0.5 * spec.alpha * z * z + jump_penalty(spec.alpha, u, &jumps)?;
        let slack = 1e-12 * (1.0 + lower.abs() + upper.abs() + f.abs());
        if f < lower - slack || f > upper + slack {
            violations.push(H1Violation {
                z: *z,
                u: u.clone(),
                lower,
                value: f,
                upper,
            });
        }
    }
    Ok(H1Report {
        checked: points.len(),
        zero_in_set: constraint.contains(0.0),
        violations,
    })
}

/// `∫_0^1 g_a'(b + l (a - b)) dl`, i.e. the difference quotient of `g_a`
/// (its derivative when `a == b`).
pub fn g_difference_quotient(alpha: f64, a: f64, b: f64) -> f64 {
    let h = alpha * (a - b);
    if h == 0.0 {
        g_prime(alpha, a)
    } else {
        (alpha * b).exp() * h.exp_m1() / h - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaCoefficients {
    pub gamma: Vec<f64>,
    /// `gamma >= -1 + delta_lower`.
    pub delta_lower: f64,
    /// `gamma <= c_upper`.
    pub c_upper: f64,
}

/// Per-mark increment coefficient of the generator in `u`, with the analytic
/// envelope for arguments bounded by `K = max(|u|_inf, |u'|_inf)`.
///
/// The quotient is increasing in both arguments, and both arguments move
/// linearly in `pi`, so the sup/inf over an interval sits at an endpoint.
pub fn gamma_coefficient(
    alpha: f64,
    u: &[f64],
    u_prime: &[f64],
    beta: &[f64],
    constraint: &ConstraintSet,
    jumps: &JumpSpec,
) -> Result<GammaCoefficients> {
    let (lo, hi) = constraint.bounds()?;
    for (what, v) in [("u", u), ("u_prime", u_prime), ("beta", beta)] {
        if v.len() != jumps.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: jumps.len(),
                actual: v.len(),
            });
        }
    }
    let gamma = (0..jumps.len())
        .map(|j| {
            let at = |pi: f64| {
                g_difference_quotient(alpha, u[j] - pi * beta[j], u_prime[j] - pi * beta[j])
            };
            let (ql, qh) = (at(lo), at(hi));
            if u[j] >= u_prime[j] {
                ql.max(qh)
            } else {
                ql.min(qh)
            }
        })
        .collect();
    let k = u.iter().chain(u_prime).fold(0.0f64, |m, v| m.max(v.abs()));
    let beta_max = beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k_prime = k + lo.abs().max(hi.abs()) * beta_max;
    Ok(GammaCoefficients {
        gamma,
        delta_lower: (-alpha * k_prime).exp(),
        c_upper: (alpha * k_prime).exp_m1(),
    })
}

/// Difference quotient of `f` in `z`; zero when `z == z'`.
pub fn lambda_coefficient(
    t_index: usize,
    z: f64,
    z_prime: f64,
    u: &[f64],
    spec: &MarketSpec,
    constraint: &ConstraintSet,
) -> Result<f64> {
    if z == z_prime {
        return Ok(0.0);
    }
    let d = StepDriver::new(spec, t_index, constraint)?;
    check_len(u, d.n_marks())?;
    Ok((d.eval(z, u).value - d.eval(z_prime, u).value) / (z - z_prime))
}

/// `kappa_s = 2 sigma_s sup_C |pi|`, paired with the constant `C = a/2` so
/// that `|lambda| <= C (kappa + |z| + |z'|)`.
pub fn kappa(spec: &MarketSpec, t_index: usize, constraint: &ConstraintSet) -> Result<f64> {
    Ok(2.0 * spec.sigma_at(t_index) * constraint.sup_abs()?)
}

pub fn lambda_bound(
    spec: &MarketSpec,
    t_index: usize,
    constraint: &ConstraintSet,
    z: f64,
    z_prime: f64,
) -> Result<f64> {
    Ok(0.5 * spec.alpha * (kappa(spec, t_index, constraint)? + z.abs() + z_prime.abs()))
}

/// Structural coefficients for one pair of arguments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Coefficients {
    pub lambda: f64,
    pub gamma: Vec<f64>,
    pub kappa: f64,
    pub delta_lower: f64,
    pub c_upper: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn h2_coefficients(
    t_index: usize,
    z: f64,
    z_prime: f64,
    u: &[f64],
    u_prime: &[f64],
    spec: &MarketSpec,
    constraint: &ConstraintSet,
) -> Result<H2Coefficients> {
    let jumps = spec.jumps()?;
    let g = gamma_coefficient(
        spec.alpha,
        u,
        u_prime,
        &spec.beta_at(t_index),
        constraint,
        &jumps,
    )?;
    Ok(H2Coefficients {
        lambda: lambda_coefficient(t_index, z, z_prime, u, spec, constraint)?,
        gamma: g.gamma,
        kappa: kappa(spec, t_index, constraint)?,
        delta_lower: g.delta_lower,
        c_upper: g.c_upper,
    })
}

/// Lipschitz constant `C_m` of the truncated generator at one step:
/// `|f^m(z,u) - f^m(z',u')| <= C_m (|z - z'| + ||u - u'||_{L2(n)})`.
pub fn truncated_lipschitz(d: &StepDriver, m: f64, big_m: f64) -> f64 {
    let p = d.sup_abs_pi();
    let a = p * d.sigma + m + 1.0 + d.theta.abs() / d.alpha;
    let cz = d.alpha * a + RHO_SLOPE * 0.5 * d.alpha * a * a + d.theta.abs();
    let cu2: f64 = (0..d.n_marks())
        .map(|j| {
            let y = big_m + 1.0 + p * d.beta[j].abs();
            let c = g_prime(d.alpha, y) + RHO_SLOPE * g(d.alpha, y);
            d.intensities[j] * c * c
        })
        .sum();
    cz.max(cu2.sqrt())
}

/// `sup_t C_m` over the steps of the grid.
pub fn truncated_lipschitz_sup(
    spec: &MarketSpec,
    steps: usize,
    constraint: &ConstraintSet,
    m: f64,
) -> Result<f64> {
    let big_m = truncation_floor(spec)?;
    let mut l = 0.0f64;
    for i in 0..steps {
        l = l.max(truncated_lipschitz(
            &StepDriver::new(spec, i, constraint)?,
            m,
            big_m,
        ));
    }
    Ok(l)
}
