//! Run configuration read from JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketSpec, TimeGrid};
use crate::regression::RegressionConfig;
use crate::solver::{LadderMode, DEFAULT_LIPSCHITZ_C0};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub steps: usize,
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub degree: usize,
    pub ridge: f64,
    pub min_paths_per_fit: usize,
    pub tail_quantile: f64,
    pub ladder: Vec<f64>,
    pub mode: LadderMode,
    pub lipschitz_c0: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let r = RegressionConfig::default();
        SolverConfig {
            degree: r.degree,
            ridge: r.ridge,
            min_paths_per_fit: r.min_paths_per_fit,
            tail_quantile: r.tail_quantile,
            ladder: Vec::new(),
            mode: LadderMode::CompactTruncation,
            lipschitz_c0: DEFAULT_LIPSCHITZ_C0,
        }
    }
}

impl SolverConfig {
    pub fn regression(&self) -> RegressionConfig {
        RegressionConfig {
            degree: self.degree,
            ridge: self.ridge,
            min_paths_per_fit: self.min_paths_per_fit,
            tail_quantile: self.tail_quantile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub depth: usize,
    pub actions: usize,
    pub x0: f64,
    pub tol_y0: f64,
    pub tol_v0: f64,
    pub tol_pi0: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            depth: 3,
            actions: 81,
            x0: 0.0,
            tol_y0: 1e-2,
            tol_v0: 1e-2,
            tol_pi0: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueConfig {
    pub x: Vec<f64>,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig { x: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub value: ValueConfig,
    #[serde(default)]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.steps == 0 {
            return Err(Error::config("grid.steps", "need at least one step"));
        }
        if self.grid.paths < 2 {
            return Err(Error::config("grid.paths", "need at least two paths"));
        }
        self.market.validate(Some(self.grid.steps))?;
        self.solver
            .regression()
            .validate()
            .map_err(|m| Error::config("solver", m))?;
        if self.solver.ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(
                "solver.ladder",
                "levels must be strictly increasing",
            ));
        }
        if self
            .solver
            .ladder
            .iter()
            .any(|m| !(m.is_finite() && *m > 0.0))
        {
            return Err(Error::config("solver.ladder", "levels must be positive"));
        }
        if !(self.solver.lipschitz_c0 > 0.0) {
            return Err(Error::config("solver.lipschitz_c0", "must be positive"));
        }
        if self.oracle.depth == 0 || self.oracle.depth > crate::oracle::MAX_DEPTH {
            return Err(Error::config(
                "oracle.depth",
                format!("must lie in 1..={}", crate::oracle::MAX_DEPTH),
            ));
        }
        if self.oracle.actions == 0 {
            return Err(Error::config("oracle.actions", "need at least one action"));
        }
        for (name, v) in [
            ("oracle.tol_y0", self.oracle.tol_y0),
            ("oracle.tol_v0", self.oracle.tol_v0),
            ("oracle.tol_pi0", self.oracle.tol_pi0),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(name, "tolerance must be nonnegative"));
            }
        }
        if self.value.x.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("value.x", "wealth grid must be finite"));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.grid.steps, self.market.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MERTON: &str = r#"{
        "market": {"b": 0.4, "sigma": 1.0, "alpha": 2.0, "horizon": 1.0,
                   "claim": {"type": "constant", "value": 0.0},
                   "constraint": {"type": "interval", "lo": -5.0, "hi": 5.0}},
        "grid": {"steps": 10, "paths": 100, "seed": 1}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_json(MERTON).unwrap();
        c.validate().unwrap();
        assert_eq!(c.solver.degree, 4);
        assert_eq!(c.oracle.actions, 81);
        assert_eq!(c.value.x, vec![0.0]);
    }

    #[test]
    fn beta_guard_names_invariant() {
        let text = MERTON.replace(
            r#""alpha": 2.0"#,
            r#""alpha": 2.0, "marks": [0.1], "intensities": [1.0], "beta": [-1.0]"#,
        );
        let c = RunConfig::from_json(&text).unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("beta > -1"), "{e}");
        assert!(e.is_config());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = MERTON.replace(r#""seed": 1"#, r#""seed": 1, "sede": 2"#);
        assert!(RunConfig::from_json(&text).unwrap_err().is_config());
    }

    #[test]
    fn ladder_must_increase() {
        let mut c = RunConfig::from_json(MERTON).unwrap();
        c.solver.ladder = vec![2.0, 1.0];
        assert!(c.validate().is_err());
    }
}
