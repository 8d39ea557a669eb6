//! Python bindings for `jumpbsde`.

use jumpbsde::cli::Cli;
use jumpbsde::oracle::tree_certainty_equivalent;
use jumpbsde::paths::retain_accepted;
use jumpbsde::solver::{self, BsdeSolution};
use jumpbsde::{control, driver, Error, MarketSpec, RunConfig, StrategyPath};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Serializes through JSON so nested results arrive as plain dicts and lists.
fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Parses a run configuration and applies the optional grid overrides.
pub fn parse_config(
    text: &str,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> jumpbsde::Result<RunConfig> {
    let mut cfg = RunConfig::from_json(text)?;
    if let Some(p) = paths {
        cfg.grid.paths = p;
    }
    if let Some(s) = steps {
        cfg.grid.steps = s;
    }
    if let Some(s) = seed {
        cfg.grid.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Simulates the configured market and solves on its (compact) constraint set.
pub fn solve_config(cfg: &RunConfig) -> jumpbsde::Result<(BsdeSolution, StrategyPath)> {
    let m = &cfg.market;
    let grid = cfg.time_grid()?;
    let bundle = jumpbsde::simulate_paths(m, &grid, cfg.grid.paths, cfg.grid.seed)?;
    let prices = jumpbsde::evolve_price(&bundle, m)?;
    let (bundle, prices) = retain_accepted(&bundle, &prices);
    let sol = jumpbsde::solve_bsde(&bundle, &prices, m, &m.constraint, &cfg.solver.regression())?;
    let pi = control::optimal_strategy(&sol, m, &m.constraint)?;
    Ok((sol, pi))
}

#[pyclass(name = "Market", frozen)]
pub struct PyMarket {
    spec: MarketSpec,
}

#[pymethods]
impl PyMarket {
    /// Builds a market from the `market` object of a run configuration.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: MarketSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.validate(None).map_err(to_py)?;
        Ok(PyMarket { spec })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.spec).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    #[getter]
    fn n_marks(&self) -> usize {
        self.spec.n_marks()
    }

    /// `(C1, C2, C3 estimate)`.
    fn a_priori_bounds(&self) -> PyResult<(f64, f64, f64)> {
        let b = jumpbsde::a_priori_bounds(&self.spec).map_err(to_py)?;
        Ok((b.c1, b.c2, b.c3_estimate))
    }

    /// Generator value and minimizing position at step `step`.
    fn driver(&self, step: usize, z: f64, u: Vec<f64>) -> PyResult<(f64, f64)> {
        let d = driver::StepDriver::new(&self.spec, step, &self.spec.constraint).map_err(to_py)?;
        if u.len() != d.n_marks() {
            return Err(PyValueError::new_err(format!(
                "expected {} jump components, got {}",
                d.n_marks(),
                u.len()
            )));
        }
        let e = d.eval(z, &u);
        Ok((e.value, e.minimizer))
    }

    fn __repr__(&self) -> String {
        format!(
            "Market(alpha={}, horizon={}, marks={}, constraint={})",
            self.spec.alpha,
            self.spec.horizon,
            self.spec.n_marks(),
            self.spec.constraint.describe()
        )
    }
}

#[pyclass(name = "Solution", frozen)]
pub struct PySolution {
    sol: BsdeSolution,
    pi: StrategyPath,
    alpha: f64,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn y0(&self) -> f64 {
        self.sol.y0()
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.sol.n_paths()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.sol.steps()
    }

    /// Value at initial wealth `x`.
    #[pyo3(signature = (x = 0.0))]
    fn v0(&self, x: f64) -> PyResult<f64> {
        control::value_function(self.sol.y0(), x, self.alpha).map_err(to_py)
    }

    fn times(&self) -> Vec<f64> {
        self.sol.grid.nodes().to_vec()
    }

    fn mean_y(&self) -> Vec<f64> {
        (0..=self.sol.steps()).map(|i| self.sol.mean_y(i)).collect()
    }

    /// `Y` on every path at one node.
    fn y_at(&self, node: usize) -> PyResult<Vec<f64>> {
        self.sol
            .y
            .get(node)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("node {node} is out of range")))
    }

    /// Optimal positions on every path at one step.
    fn strategy_at(&self, step: usize) -> PyResult<Vec<f64>> {
        self.pi
            .values
            .get(step)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("step {step} is out of range")))
    }

    /// `(mean, min, max)` of the optimal position at one step.
    fn strategy_stats(&self, step: usize) -> PyResult<(f64, f64, f64)> {
        if step >= self.sol.steps() {
            return Err(PyValueError::new_err(format!(
                "step {step} is out of range"
            )));
        }
        Ok(self.pi.stats(step))
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.sol.diagnostics)
    }

    fn norm_equivalence<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &solver::norm_equivalence_check(&self.sol, self.alpha))
    }
}

/// Simulates and solves the configured problem.
#[pyfunction]
#[pyo3(signature = (config, paths = None, steps = None, seed = None))]
fn solve(
    py: Python<'_>,
    config: &str,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> PyResult<PySolution> {
    let cfg = parse_config(config, paths, steps, seed).map_err(to_py)?;
    let (sol, pi) = py.detach(|| solve_config(&cfg)).map_err(to_py)?;
    Ok(PySolution {
        sol,
        pi,
        alpha: cfg.market.alpha,
    })
}

/// Runs the configured truncation ladder and returns its convergence report.
#[pyfunction]
#[pyo3(signature = (config, paths = None, steps = None, seed = None))]
fn ladder<'py>(
    py: Python<'py>,
    config: &str,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config, paths, steps, seed).map_err(to_py)?;
    let report = py
        .detach(|| -> jumpbsde::Result<_> {
            let m = &cfg.market;
            let grid = cfg.time_grid()?;
            let bundle = jumpbsde::simulate_paths(m, &grid, cfg.grid.paths, cfg.grid.seed)?;
            let prices = jumpbsde::evolve_price(&bundle, m)?;
            let (bundle, prices) = retain_accepted(&bundle, &prices);
            let (_, report) = jumpbsde::solve_sequence(
                cfg.solver.mode,
                &cfg.solver.ladder,
                &bundle,
                &prices,
                m,
                &cfg.solver.regression(),
            )?;
            Ok(report)
        })
        .map_err(to_py)?;
    to_object(py, &report)
}

#[derive(Serialize)]
struct TreeSummary {
    depth: usize,
    dp_value: f64,
    dp_y0: f64,
    tree_y0: f64,
    tree_v0: f64,
    certainty_equivalent_y0: f64,
    pi0: f64,
}

/// Scenario-tree values: grid dynamic programming, the explicit tree BSDE and
/// the exact certainty equivalent.
#[pyfunction]
#[pyo3(signature = (config, depth = None, actions = None))]
fn tree_oracle<'py>(
    py: Python<'py>,
    config: &str,
    depth: Option<usize>,
    actions: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = parse_config(config, None, None, None).map_err(to_py)?;
    if let Some(d) = depth {
        cfg.oracle.depth = d;
    }
    if let Some(a) = actions {
        cfg.oracle.actions = a;
    }
    cfg.validate().map_err(to_py)?;
    let m = &cfg.market;
    let x0 = cfg.oracle.x0;
    let summary = (|| -> jumpbsde::Result<TreeSummary> {
        let tree = jumpbsde::TreeModel::new(m, cfg.oracle.depth)?;
        let grid = jumpbsde::ActionGrid::uniform(&m.constraint, cfg.oracle.actions)?;
        let dp = jumpbsde::dp_value(&tree, &grid, m.alpha, &m.claim, x0)?;
        let tb = jumpbsde::tree_bsde(&tree, &m.constraint, &m.claim)?;
        let ce = tree_certainty_equivalent(&tree, &m.constraint, &m.claim)?;
        Ok(TreeSummary {
            depth: tree.depth(),
            dp_value: dp.value,
            dp_y0: dp.y0(m.alpha),
            tree_y0: tb.y0(),
            tree_v0: control::value_function(tb.y0(), x0, m.alpha)?,
            certainty_equivalent_y0: ce.y[0][0],
            pi0: tb.pi[0][0],
        })
    })()
    .map_err(to_py)?;
    to_object(py, &summary)
}

/// `-exp(-alpha (x - y))`.
#[pyfunction]
fn value_function(y: f64, x: f64, alpha: f64) -> PyResult<f64> {
    control::value_function(y, x, alpha).map_err(to_py)
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<i32> {
    use clap::Parser;
    let cli = Cli::try_parse_from(std::iter::once("jumpbsde".to_string()).chain(args))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.detach(|| jumpbsde::cli::run(&cli)))
}

#[pymodule]
fn jumpbsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarket>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(ladder, m)?)?;
    m.add_function(wrap_pyfunction!(tree_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(value_function, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
