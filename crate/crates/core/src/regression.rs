//! Least-squares conditional expectations on a polynomial basis of the
//! one-dimensional state, solved through ridge-regularized normal equations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Partial sums are formed over fixed-size chunks and combined in order, so
/// results do not depend on the number of worker threads.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    /// Polynomial degree in the standardized log-price (plus constant).
    pub degree: usize,
    /// Ridge weight relative to the mean diagonal of the Gram matrix. The
    /// intercept is never penalized.
    pub ridge: f64,
    /// Below this many paths the fit falls back to the sample mean.
    pub min_paths_per_fit: usize,
    /// States beyond these lower/upper quantiles are clipped before the basis
    /// is evaluated, so the fit is flat in the tails instead of extrapolating.
    pub tail_quantile: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            degree: 4,
            ridge: 1e-8,
            min_paths_per_fit: 64,
            tail_quantile: 1e-3,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(format!("ridge = {} must be finite and >= 0", self.ridge));
        }
        if !(0.0..0.5).contains(&self.tail_quantile) {
            return Err(format!(
                "tail_quantile = {} must lie in [0, 0.5)",
                self.tail_quantile
            ));
        }
        if self.degree > 12 {
            return Err(format!("degree = {} is too large", self.degree));
        }
        Ok(())
    }
}

/// Factorized design for one set of states; reused across several targets.
#[derive(Debug, Clone)]
pub struct Regressor {
    n: usize,
    k: usize,
    mean: f64,
    scale: f64,
    lo: f64,
    hi: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Regressor {
    pub fn new(states: &[f64], cfg: &RegressionConfig) -> Result<Self, String> {
        let n = states.len();
        if n == 0 {
            return Err("no paths to regress on".into());
        }
        let (lo, hi) = quantile_range(states, cfg.tail_quantile);
        let clip = |x: f64| x.clamp(lo, hi);
        let mean = ordered_sum(states, clip) / n as f64;
        let var = ordered_sum(states, |x| (clip(x) - mean) * (clip(x) - mean)) / n as f64;
        let sd = var.sqrt();
        let degenerate = !(sd > 1e-12 * (1.0 + mean.abs()));
        let degree = if degenerate || n < cfg.min_paths_per_fit {
            0
        } else {
            cfg.degree.min(n.saturating_sub(1))
        };
        let k = degree + 1;
        let scale = if degree == 0 { 1.0 } else { sd };

        let partials: Vec<Vec<f64>> = states
            .par_chunks(CHUNK)
            .map(|c| {
                let mut g = vec![0.0; k * k];
                let mut row = vec![0.0; k];
                for &x in c {
                    fill_row(&mut row, (clip(x) - mean) / scale);
                    for a in 0..k {
                        for b in a..k {
                            g[a * k + b] += row[a] * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(k, k);
        for p in &partials {
            for a in 0..k {
                for b in a..k {
                    gram[(a, b)] += p[a * k + b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                gram[(a, b)] /= n as f64;
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let mean_diag = gram.diagonal().sum() / k as f64;
        for a in 1..k {
            gram[(a, a)] += cfg.ridge * mean_diag;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| format!("normal equations of size {k} are not positive definite"))?;
        Ok(Regressor {
            n,
            k,
            mean,
            scale,
            lo,
            hi,
            chol,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n
    }

    pub fn n_basis(&self) -> usize {
        self.k
    }

    pub fn coefficients(&self, states: &[f64], targets: &[f64]) -> Vec<f64> {
        debug_assert_eq!(states.len(), self.n);
        debug_assert_eq!(targets.len(), self.n);
        let k = self.k;
        let partials: Vec<Vec<f64>> = states
            .par_chunks(CHUNK)
            .zip(targets.par_chunks(CHUNK))
            .map(|(xs, ys)| {
                let mut r = vec![0.0; k];
                let mut row = vec![0.0; k];
                for (&x, &y) in xs.iter().zip(ys) {
                    fill_row(&mut row, self.standardize(x));
                    for a in 0..k {
                        r[a] += row[a] * y;
                    }
                }
                r
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(k);
        for p in &partials {
            for a in 0..k {
                rhs[a] += p[a];
            }
        }
        rhs /= self.n as f64;
        self.chol.solve(&rhs).iter().copied().collect()
    }

    #[inline]
    fn standardize(&self, x: f64) -> f64 {
        (x.clamp(self.lo, self.hi) - self.mean) / self.scale
    }

    /// Value of the fitted function at a state.
    pub fn evaluate(&self, coef: &[f64], state: f64) -> f64 {
        let s = self.standardize(state);
        coef.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// Fitted conditional expectation at every state.
    pub fn fit(&self, states: &[f64], targets: &[f64]) -> Vec<f64> {
        let coef = self.coefficients(states, targets);
        states
            .par_iter()
            .map(|&x| self.evaluate(&coef, x))
            .collect()
    }
}

/// Empirical `q` and `1 - q` quantiles (order statistics, no interpolation).
fn quantile_range(xs: &[f64], q: f64) -> (f64, f64) {
    let n = xs.len();
    let k = (q * n as f64).floor() as usize;
    if k == 0 {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return (lo, hi);
    }
    let mut v = xs.to_vec();
    let lo = *v.select_nth_unstable_by(k, f64::total_cmp).1;
    let hi = *v.select_nth_unstable_by(n - 1 - k, f64::total_cmp).1;
    (lo, hi)
}

#[inline]
fn fill_row(row: &mut [f64], s: f64) {
    let mut p = 1.0;
    for r in row.iter_mut() {
        *r = p;
        p *= s;
    }
}

/// Deterministic parallel sum of `f(x)`.
pub fn ordered_sum<F>(xs: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    xs.par_chunks(CHUNK)
        .map(|c| c.iter().map(|&x| f(x)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Deterministic parallel sum over indices.
pub fn ordered_sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}
