//! Path simulation on a time grid: Brownian increments, per-mark Poisson
//! counts, discrete stochastic-exponential prices and self-financing wealth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{ConstraintSet, MarketSpec, TimeGrid};

/// Simulated driving noise. Storage is path-major so each path owns a
/// disjoint slot during parallel simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    n_paths: usize,
    intensities: Vec<f64>,
    seed: u64,
    /// Substream id of each stored path.
    streams: Vec<u64>,
    dw: Vec<f64>,
    dn: Vec<u32>,
}

impl PathBundle {
    /// Bundle from explicit increments, laid out `[path][step]` and
    /// `[path][step][mark]`.
    pub fn from_increments(
        grid: TimeGrid,
        intensities: Vec<f64>,
        dw: Vec<f64>,
        dn: Vec<u32>,
    ) -> Result<Self> {
        let steps = grid.steps();
        if dw.is_empty() || !dw.len().is_multiple_of(steps) {
            return Err(Error::LengthMismatch {
                what: "brownian increments",
                expected: steps,
                actual: dw.len(),
            });
        }
        let n_paths = dw.len() / steps;
        let expected = n_paths * steps * intensities.len();
        if dn.len() != expected {
            return Err(Error::LengthMismatch {
                what: "jump counts",
                expected,
                actual: dn.len(),
            });
        }
        Ok(PathBundle {
            grid,
            n_paths,
            intensities,
            seed: 0,
            streams: (0..n_paths as u64).collect(),
            dw,
            dn,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_marks(&self) -> usize {
        self.intensities.len()
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn streams(&self) -> &[u64] {
        &self.streams
    }

    #[inline]
    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.dw[path * self.steps() + step]
    }

    #[inline]
    pub fn dn(&self, path: usize, step: usize, mark: usize) -> u32 {
        self.dn[(path * self.steps() + step) * self.n_marks() + mark]
    }

    /// Compensated count `ΔN - n_j dt`.
    #[inline]
    pub fn dn_comp(&self, path: usize, step: usize, mark: usize) -> f64 {
        self.dn(path, step, mark) as f64 - self.intensities[mark] * self.grid.dt(step)
    }

    /// Keeps the listed paths, in order.
    pub fn select(&self, paths: &[usize]) -> PathBundle {
        let steps = self.steps();
        let per = steps * self.n_marks();
        let mut dw = Vec::with_capacity(paths.len() * steps);
        let mut dn = Vec::with_capacity(paths.len() * per);
        for &p in paths {
            dw.extend_from_slice(&self.dw[p * steps..(p + 1) * steps]);
            dn.extend_from_slice(&self.dn[p * per..(p + 1) * per]);
        }
        PathBundle {
            grid: self.grid.clone(),
            n_paths: paths.len(),
            intensities: self.intensities.clone(),
            seed: self.seed,
            streams: paths.iter().map(|&p| self.streams[p]).collect(),
            dw,
            dn,
        }
    }
}

/// Generator for one path: ChaCha8 keyed by the run seed, positioned on the
/// stream of the path index, so results do not depend on scheduling.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn simulate_paths(
    spec: &MarketSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::config("grid.paths", "need at least one path"));
    }
    let jumps = spec.jumps()?;
    let steps = grid.steps();
    let marks = jumps.len();
    let sampler = |step: usize, j: usize| {
        Poisson::new(jumps.intensities()[j] * grid.dt(step))
            .map_err(|e| Error::Domain(format!("poisson mean at step {step}, mark {j}: {e}")))
    };
    let poisson = (0..steps)
        .flat_map(|i| (0..marks).map(move |j| (i, j)))
        .map(|(i, j)| sampler(i, j))
        .collect::<Result<Vec<_>>>()?;

    let mut dw = vec![0.0; n_paths * steps];
    // one dummy slot per path when there are no marks keeps the zip aligned
    let mut dn = vec![0u32; n_paths * (steps * marks).max(1)];
    dw.par_chunks_mut(steps)
        .zip(dn.par_chunks_mut((steps * marks).max(1)))
        .enumerate()
        .for_each(|(p, (w, n))| {
            let mut rng = path_rng(seed, p as u64);
            for i in 0..steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                w[i] = z * grid.dt(i).sqrt();
                for j in 0..marks {
                    n[i * marks + j] = poisson[i * marks + j].sample(&mut rng) as u32;
                }
            }
        });
    if marks == 0 {
        dn.clear();
    }
    Ok(PathBundle {
        grid: grid.clone(),
        n_paths,
        intensities: jumps.intensities().to_vec(),
        seed,
        streams: (0..n_paths as u64).collect(),
        dw,
        dn,
    })
}

/// One-step relative return `b dt + sigma ΔW + sum_j beta_j (ΔN_j - n_j dt)`.
#[inline]
pub fn step_return(bundle: &PathBundle, spec: &MarketSpec, path: usize, step: usize) -> f64 {
    let dt = bundle.grid().dt(step);
    let mut r = spec.b_at(step) * dt + spec.sigma_at(step) * bundle.dw(path, step);
    for (j, beta) in spec.beta.iter().enumerate() {
        r += beta.at(step) * bundle.dn_comp(path, step, j);
    }
    r
}

/// Price paths `[path][node]` with the set of rejected paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricePaths {
    steps: usize,
    prices: Vec<f64>,
    rejected: Vec<bool>,
}

impl PricePaths {
    pub fn n_paths(&self) -> usize {
        self.rejected.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn price(&self, path: usize, node: usize) -> f64 {
        self.prices[path * (self.steps + 1) + node]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        &self.prices[path * (self.steps + 1)..(path + 1) * (self.steps + 1)]
    }

    pub fn is_rejected(&self, path: usize) -> bool {
        self.rejected[path]
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }

    pub fn accepted(&self) -> Vec<usize> {
        (0..self.n_paths()).filter(|&p| !self.rejected[p]).collect()
    }

    pub fn select(&self, paths: &[usize]) -> PricePaths {
        let mut prices = Vec::with_capacity(paths.len() * (self.steps + 1));
        for &p in paths {
            prices.extend_from_slice(self.path(p));
        }
        PricePaths {
            steps: self.steps,
            prices,
            rejected: paths.iter().map(|&p| self.rejected[p]).collect(),
        }
    }
}

/// Multiplicative update `S_{i+1} = S_i (1 + r_i)`. A path whose factor
/// `1 + r_i` is not positive is flagged; its price is frozen from that step on.
pub fn evolve_price(bundle: &PathBundle, spec: &MarketSpec) -> Result<PricePaths> {
    check_marks(bundle, spec)?;
    let steps = bundle.steps();
    let mut prices = vec![0.0; bundle.n_paths() * (steps + 1)];
    let rejected = prices
        .par_chunks_mut(steps + 1)
        .enumerate()
        .map(|(p, s)| {
            s[0] = spec.s0;
            let mut bad = false;
            for i in 0..steps {
                let factor = 1.0 + step_return(bundle, spec, p, i);
                if bad || factor <= 0.0 {
                    bad = true;
                    s[i + 1] = s[i];
                } else {
                    s[i + 1] = s[i] * factor;
                }
            }
            bad
        })
        .collect();
    Ok(PricePaths {
        steps,
        prices,
        rejected,
    })
}

/// Drops flagged paths from a bundle and its prices.
pub fn retain_accepted(bundle: &PathBundle, prices: &PricePaths) -> (PathBundle, PricePaths) {
    let keep = prices.accepted();
    (bundle.select(&keep), prices.select(&keep))
}

/// Wealth paths `X[step][path]`, step-major like strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPaths {
    pub x0: f64,
    pub values: Vec<Vec<f64>>,
}

/// `X_{i+1} = X_i + pi_i r_i`, strategy laid out `[step][path]`.
pub fn evolve_wealth(
    bundle: &PathBundle,
    spec: &MarketSpec,
    constraint: &ConstraintSet,
    strategy: &[Vec<f64>],
    x0: f64,
) -> Result<WealthPaths> {
    check_marks(bundle, spec)?;
    let steps = bundle.steps();
    if strategy.len() != steps {
        return Err(Error::LengthMismatch {
            what: "strategy steps",
            expected: steps,
            actual: strategy.len(),
        });
    }
    for (i, row) in strategy.iter().enumerate() {
        if row.len() != bundle.n_paths() {
            return Err(Error::LengthMismatch {
                what: "strategy paths",
                expected: bundle.n_paths(),
                actual: row.len(),
            });
        }
        if let Some(p) = row.iter().position(|&v| !constraint.contains(v)) {
            return Err(Error::ConstraintViolation {
                step: i,
                path: p,
                value: row[p],
                set: constraint.describe(),
            });
        }
    }
    let mut values = Vec::with_capacity(steps + 1);
    values.push(vec![x0; bundle.n_paths()]);
    for i in 0..steps {
        let next = values[i]
            .par_iter()
            .enumerate()
            .map(|(p, &x)| x + strategy[i][p] * step_return(bundle, spec, p, i))
            .collect();
        values.push(next);
    }
    Ok(WealthPaths { x0, values })
}

/// Running product `E_0 = 1, E_{k+1} = E_k * factor_k`.
pub fn stochastic_exponential(factors: &[f64], positivity: bool) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(factors.len() + 1);
    out.push(1.0);
    for (k, &f) in factors.iter().enumerate() {
        if positivity && !(f > 0.0) {
            return Err(Error::NonPositiveFactor { index: k, value: f });
        }
        out.push(out[k] * f);
    }
    Ok(out)
}

fn check_marks(bundle: &PathBundle, spec: &MarketSpec) -> Result<()> {
    if bundle.n_marks() != spec.n_marks() || spec.beta.len() != spec.n_marks() {
        return Err(Error::Mismatch(format!(
            "bundle has {} marks, market has {} marks and {} loadings",
            bundle.n_marks(),
            spec.n_marks(),
            spec.beta.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::tests::merton;
    use crate::market::StepFn;

    fn with_jump(mut spec: MarketSpec, beta: f64, n: f64) -> MarketSpec {
        spec.marks = vec![0.5];
        spec.intensities = vec![n];
        spec.beta = vec![StepFn::Constant(beta)];
        spec
    }

    #[test]
    fn empty_jump_spec_gives_no_counts() {
        let grid = TimeGrid::uniform(5, 1.0).unwrap();
        let b = simulate_paths(&merton(), &grid, 10, 1).unwrap();
        assert_eq!(b.n_marks(), 0);
        assert_eq!(b.dn.len(), 0);
    }

    #[test]
    fn simulation_is_deterministic() {
        let grid = TimeGrid::uniform(7, 1.0).unwrap();
        let spec = with_jump(merton(), 0.2, 3.0);
        let a = simulate_paths(&spec, &grid, 257, 99).unwrap();
        let b = simulate_paths(&spec, &grid, 257, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&spec, &grid, 257, 100).unwrap();
        assert_ne!(a.dw, c.dw);
        // path p is the same whatever the bundle size
        let d = simulate_paths(&spec, &grid, 12, 99).unwrap();
        assert_eq!(&a.dw[..12 * 7], &d.dw[..]);
    }

    #[test]
    fn poisson_mean_within_clt_band() {
        let grid = TimeGrid::uniform(1, 0.5).unwrap();
        let spec = with_jump(merton(), 0.2, 2.0);
        let n = 100_000;
        let b = simulate_paths(&spec, &grid, n, 5).unwrap();
        let mean = (0..n).map(|p| b.dn(p, 0, 0) as f64).sum::<f64>() / n as f64;
        // mean n dt = 1, variance 1
        assert!(
            (mean - 1.0).abs() <= 3.0 * (1.0 / n as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn zero_coefficients_freeze_price_and_wealth() {
        let mut spec = with_jump(merton(), 0.0, 1.0);
        spec.b = 0.0.into();
        spec.sigma = 0.0.into();
        spec.sigma_min = 1e-300;
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let b = simulate_paths(&spec, &grid, 20, 3).unwrap();
        let s = evolve_price(&b, &spec).unwrap();
        for p in 0..20 {
            assert!(s.path(p).iter().all(|&v| v == 1.0));
        }
        let ones = vec![vec![1.0; 20]; 4];
        let x = evolve_wealth(&b, &spec, &spec.constraint, &ones, 3.5).unwrap();
        assert!(x.values.iter().flatten().all(|&v| v == 3.5));
    }

    #[test]
    fn forced_jump_multiplies_price() {
        let mut spec = with_jump(merton(), 0.5, 0.4);
        spec.b = 0.0.into();
        spec.sigma = 1.0.into();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let dn = vec![0, 0, 1, 0];
        let b = PathBundle::from_increments(grid, vec![0.4], vec![0.0; 4], dn).unwrap();
        let s = evolve_price(&b, &spec).unwrap();
        let dt = 0.25;
        let drift = 1.0 - 0.5 * 0.4 * dt;
        assert!((s.price(0, 2) - drift * drift).abs() < 1e-15);
        let ratio = s.price(0, 3) / s.price(0, 2);
        assert!((ratio - (1.0 + 0.5 - 0.5 * 0.4 * dt)).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_factor_flags_path() {
        let mut spec = with_jump(merton(), -0.9, 1.0);
        spec.sigma = 1.0.into();
        spec.b = 0.0.into();
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        // path 0: big negative diffusion move; path 1: quiet
        let b = PathBundle::from_increments(
            grid,
            vec![1.0],
            vec![-1.5, 0.0, 0.0, 0.0],
            vec![0, 0, 0, 0],
        )
        .unwrap();
        let s = evolve_price(&b, &spec).unwrap();
        assert!(s.is_rejected(0));
        assert!(!s.is_rejected(1));
        assert_eq!(s.rejected_count(), 1);
        let (kb, ks) = retain_accepted(&b, &s);
        assert_eq!(kb.n_paths(), 1);
        assert_eq!(ks.n_paths(), 1);
        assert_eq!(kb.streams(), &[1]);
        assert!(ks.path(0).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn wealth_telescopes_on_a_three_step_path() {
        let mut spec = with_jump(merton(), 0.2, 1.0);
        spec.b = 0.1.into();
        spec.sigma = 0.5.into();
        spec.constraint = ConstraintSet::Interval { lo: -2.0, hi: 2.0 };
        let grid = TimeGrid::uniform(3, 1.5).unwrap();
        let dw = vec![0.3, -0.2, 0.1];
        let dn = vec![0, 1, 0];
        let b = PathBundle::from_increments(grid, vec![1.0], dw.clone(), dn.clone()).unwrap();
        let pi = [1.0, -0.5, 2.0];
        let strategy: Vec<Vec<f64>> = pi.iter().map(|&v| vec![v]).collect();
        let x = evolve_wealth(&b, &spec, &spec.constraint, &strategy, 1.0).unwrap();
        let dt = 0.5;
        let mut hand = 1.0;
        for i in 0..3 {
            hand += pi[i] * (0.1 * dt + 0.5 * dw[i] + 0.2 * (dn[i] as f64 - dt));
        }
        assert!((x.values[3][0] - hand).abs() < 1e-14);
    }

    #[test]
    fn wealth_rejects_out_of_set_strategy() {
        let spec = merton();
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let b = simulate_paths(&spec, &grid, 3, 0).unwrap();
        let strategy = vec![vec![0.0; 3], vec![0.0, 7.0, 0.0]];
        let err = evolve_wealth(&b, &spec, &spec.constraint, &strategy, 0.0).unwrap_err();
        assert!(matches!(
            err,
            Error::ConstraintViolation {
                step: 1,
                path: 1,
                ..
            }
        ));
    }

    #[test]
    fn stochastic_exponential_products() {
        assert_eq!(
            stochastic_exponential(&[1.0; 4], true).unwrap(),
            vec![1.0; 5]
        );
        let e = stochastic_exponential(&[1.1, 0.9], true).unwrap();
        assert!((e[1] - 1.1).abs() < 1e-15 && (e[2] - 0.99).abs() < 1e-15);
        assert!(stochastic_exponential(&[1.0, 0.0], true).is_err());
        assert!(stochastic_exponential(&[1.0, -0.5], false).is_ok());
    }
}
