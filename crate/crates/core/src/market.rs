//! Jump-diffusion market description: the finite Lévy measure, step-function
//! coefficients, constraint sets, bounded claims and the time grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite atomic Lévy measure: marks `x_j` carrying intensities `n_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct JumpSpec {
    marks: Vec<f64>,
    intensities: Vec<f64>,
}

impl JumpSpec {
    pub fn new(marks: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if marks.len() != intensities.len() {
            return Err(Error::LengthMismatch {
                what: "jump intensities",
                expected: marks.len(),
                actual: intensities.len(),
            });
        }
        for (j, &x) in marks.iter().enumerate() {
            if !x.is_finite() || x == 0.0 {
                return Err(Error::config(
                    format!("market.marks[{j}]"),
                    "marks must be finite and nonzero",
                ));
            }
            if marks[..j].contains(&x) {
                return Err(Error::config(
                    format!("market.marks[{j}]"),
                    "marks must be pairwise distinct",
                ));
            }
        }
        for (j, &n) in intensities.iter().enumerate() {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::config(
                    format!("market.intensities[{j}]"),
                    "intensities must be finite and strictly positive",
                ));
            }
        }
        Ok(JumpSpec { marks, intensities })
    }

    pub fn empty() -> Self {
        JumpSpec::default()
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Total mass of the Lévy measure.
    pub fn total_mass(&self) -> f64 {
        self.intensities.iter().sum()
    }
}

/// Deterministic coefficient, constant or piecewise constant on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepFn {
    Constant(f64),
    Steps(Vec<f64>),
}

impl StepFn {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            StepFn::Constant(v) => *v,
            StepFn::Steps(v) => v[step.min(v.len() - 1)],
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            StepFn::Constant(v) => std::slice::from_ref(v),
            StepFn::Steps(v) => v,
        }
    }

    fn check(&self, field: &str, steps: Option<usize>) -> Result<()> {
        if let StepFn::Steps(v) = self {
            if v.is_empty() {
                return Err(Error::config(field, "step function has no values"));
            }
            if let Some(n) = steps {
                if v.len() != 1 && v.len() != n {
                    return Err(Error::config(
                        field,
                        format!("expected 1 or {n} values, got {}", v.len()),
                    ));
                }
            }
        }
        if let Some(k) = self.values().iter().position(|x| !x.is_finite()) {
            return Err(Error::config(
                format!("{field}[{k}]"),
                "value must be finite",
            ));
        }
        Ok(())
    }

    fn sup_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl From<f64> for StepFn {
    fn from(v: f64) -> Self {
        StepFn::Constant(v)
    }
}

/// Closed set of admissible positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintSet {
    /// Compact interval `[lo, hi]`.
    Interval {
        lo: f64,
        hi: f64,
    },
    /// `[lo, +inf)`.
    HalfLine {
        lo: f64,
    },
    /// `(-inf, hi]`.
    HalfLineBelow {
        hi: f64,
    },
    WholeLine,
}

impl ConstraintSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let c = ConstraintSet::Interval { lo, hi };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        match *self {
            ConstraintSet::Interval { lo, hi } => {
                if !finite(lo) || !finite(hi) {
                    return Err(Error::config("market.constraint", "bounds must be finite"));
                }
                if lo > hi {
                    return Err(Error::config(
                        "market.constraint",
                        format!("interval lower bound {lo} exceeds upper bound {hi}"),
                    ));
                }
            }
            ConstraintSet::HalfLine { lo: v } | ConstraintSet::HalfLineBelow { hi: v } => {
                if !finite(v) {
                    return Err(Error::config("market.constraint", "bound must be finite"));
                }
            }
            ConstraintSet::WholeLine => {}
        }
        Ok(())
    }

    pub fn contains(&self, pi: f64) -> bool {
        match *self {
            ConstraintSet::Interval { lo, hi } => lo <= pi && pi <= hi,
            ConstraintSet::HalfLine { lo } => pi >= lo,
            ConstraintSet::HalfLineBelow { hi } => pi <= hi,
            ConstraintSet::WholeLine => pi.is_finite(),
        }
    }

    pub fn is_compact(&self) -> bool {
        matches!(self, ConstraintSet::Interval { .. })
    }

    /// Endpoints of a compact set.
    pub fn bounds(&self) -> Result<(f64, f64)> {
        match *self {
            ConstraintSet::Interval { lo, hi } if lo <= hi => Ok((lo, hi)),
            ConstraintSet::Interval { .. } => Err(Error::EmptyConstraint),
            other => Err(Error::NonCompact(other.describe())),
        }
    }

    /// `sup |pi|` over a compact set.
    pub fn sup_abs(&self) -> Result<f64> {
        let (lo, hi) = self.bounds()?;
        Ok(lo.abs().max(hi.abs()))
    }

    /// `C ∩ [-m, m]`. Fails when the intersection is empty.
    pub fn truncate(&self, m: f64) -> Result<ConstraintSet> {
        if !(m >= 0.0) {
            return Err(Error::Domain(format!("truncation level {m} must be >= 0")));
        }
        let (lo, hi) = match *self {
            ConstraintSet::Interval { lo, hi } => (lo.max(-m), hi.min(m)),
            ConstraintSet::HalfLine { lo } => (lo.max(-m), m),
            ConstraintSet::HalfLineBelow { hi } => (-m, hi.min(m)),
            ConstraintSet::WholeLine => (-m, m),
        };
        if lo > hi {
            return Err(Error::EmptyConstraint);
        }
        Ok(ConstraintSet::Interval { lo, hi })
    }

    pub fn describe(&self) -> String {
        match *self {
            ConstraintSet::Interval { lo, hi } => format!("[{lo}, {hi}]"),
            ConstraintSet::HalfLine { lo } => format!("[{lo}, inf)"),
            ConstraintSet::HalfLineBelow { hi } => format!("(-inf, {hi}]"),
            ConstraintSet::WholeLine => "(-inf, inf)".to_string(),
        }
    }
}

/// Bounded terminal payoff written as a function of the terminal price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Claim {
    Constant {
        value: f64,
    },
    /// `min((S - strike)^+, cap)`.
    Call {
        strike: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `(strike - S)^+`, bounded by the strike since `S > 0`.
    Put {
        strike: f64,
    },
}

impl Claim {
    pub fn payoff(&self, price: f64) -> f64 {
        match *self {
            Claim::Constant { value } => value,
            Claim::Call { strike, cap } => {
                let v = (price - strike).max(0.0);
                cap.map_or(v, |c| v.min(c))
            }
            Claim::Put { strike } => (strike - price).max(0.0),
        }
    }

    /// `|B|_inf`; an error when the descriptor does not bound the payoff.
    pub fn sup_norm(&self) -> Result<f64> {
        match *self {
            Claim::Constant { value } if value.is_finite() => Ok(value.abs()),
            Claim::Constant { .. } => Err(Error::config("market.claim.value", "must be finite")),
            Claim::Call { strike, cap } => {
                if !strike.is_finite() {
                    return Err(Error::config("market.claim.strike", "must be finite"));
                }
                match cap {
                    Some(c) if c.is_finite() && c >= 0.0 => Ok(c),
                    Some(_) => Err(Error::config(
                        "market.claim.cap",
                        "cap must be finite and nonnegative",
                    )),
                    None => Err(Error::config(
                        "market.claim.cap",
                        "uncapped call is unbounded; a finite cap is required",
                    )),
                }
            }
            Claim::Put { strike } => {
                if !strike.is_finite() {
                    return Err(Error::config("market.claim.strike", "must be finite"));
                }
                Ok(strike.max(0.0))
            }
        }
    }
}

/// Time discretization `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("grid.steps", "need at least one step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config("market.horizon", "horizon must be positive"));
        }
        let nodes = (0..=steps)
            .map(|i| horizon * i as f64 / steps as f64)
            .collect::<Vec<_>>();
        Ok(TimeGrid { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::config("grid", "need at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::config("grid", "first node must be 0"));
        }
        if nodes
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::config("grid", "nodes must be strictly increasing"));
        }
        Ok(TimeGrid { nodes })
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
}

pub const DEFAULT_SIGMA_MIN: f64 = 1e-6;

fn default_sigma_min() -> f64 {
    DEFAULT_SIGMA_MIN
}

fn default_s0() -> f64 {
    1.0
}

/// Full market and preference description.
///
/// The wealth of a position `pi` evolves as
/// `dX = pi (b dt + sigma dW + sum_j beta_j dÑ_j)`, and the market price of
/// risk is `theta = b / sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub b: StepFn,
    pub sigma: StepFn,
    /// One loading per mark.
    #[serde(default)]
    pub beta: Vec<StepFn>,
    #[serde(default)]
    pub marks: Vec<f64>,
    #[serde(default)]
    pub intensities: Vec<f64>,
    pub alpha: f64,
    pub horizon: f64,
    pub claim: Claim,
    pub constraint: ConstraintSet,
    #[serde(default = "default_s0")]
    pub s0: f64,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
}

impl MarketSpec {
    /// Checks every invariant; `steps` pins the length of step-function coefficients.
    pub fn validate(&self, steps: Option<usize>) -> Result<()> {
        let jumps = self.jumps()?;
        self.b.check("market.b", steps)?;
        self.sigma.check("market.sigma", steps)?;
        if !(self.sigma_min > 0.0) {
            return Err(Error::config("market.sigma_min", "must be positive"));
        }
        for (k, &s) in self.sigma.values().iter().enumerate() {
            if s < self.sigma_min {
                return Err(Error::config(
                    format!("market.sigma[{k}]"),
                    format!("sigma = {s} is below sigma_min = {}", self.sigma_min),
                ));
            }
        }
        if self.beta.len() != jumps.len() {
            return Err(Error::config(
                "market.beta",
                format!(
                    "expected one loading per mark ({}), got {}",
                    jumps.len(),
                    self.beta.len()
                ),
            ));
        }
        for (j, beta) in self.beta.iter().enumerate() {
            let field = format!("market.beta[{j}]");
            beta.check(&field, steps)?;
            if let Some(k) = beta.values().iter().position(|&v| v <= -1.0) {
                let at = match beta {
                    StepFn::Constant(_) => field,
                    StepFn::Steps(_) => format!("{field}[{k}]"),
                };
                return Err(Error::config(
                    at,
                    "beta must satisfy beta > -1 so the stochastic exponential stays positive",
                ));
            }
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(
                "market.alpha",
                "risk aversion must be positive",
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("market.horizon", "horizon must be positive"));
        }
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(Error::config("market.s0", "initial price must be positive"));
        }
        self.claim.sup_norm()?;
        self.constraint.validate()?;
        Ok(())
    }

    pub fn jumps(&self) -> Result<JumpSpec> {
        JumpSpec::new(self.marks.clone(), self.intensities.clone())
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    pub fn b_at(&self, step: usize) -> f64 {
        self.b.at(step)
    }

    pub fn sigma_at(&self, step: usize) -> f64 {
        self.sigma.at(step).max(self.sigma_min)
    }

    pub fn theta_at(&self, step: usize) -> f64 {
        self.b_at(step) / self.sigma_at(step)
    }

    pub fn beta_at(&self, step: usize) -> Vec<f64> {
        self.beta.iter().map(|b| b.at(step)).collect()
    }

    /// `sup_t |theta_t|`.
    pub fn theta_sup(&self) -> f64 {
        let n = self.b.values().len().max(self.sigma.values().len());
        (0..n).fold(0.0, |m, i| m.max(self.theta_at(i).abs()))
    }

    pub fn sigma_sup(&self) -> f64 {
        self.sigma.sup_abs()
    }

    pub fn beta_sup(&self) -> f64 {
        self.beta.iter().fold(0.0, |m, b| m.max(b.sup_abs()))
    }

    /// Copy with a replaced claim.
    pub fn with_claim(&self, claim: Claim) -> Self {
        MarketSpec {
            claim,
            ..self.clone()
        }
    }

    pub fn with_constraint(&self, constraint: ConstraintSet) -> Self {
        MarketSpec {
            constraint,
            ..self.clone()
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn merton() -> MarketSpec {
        MarketSpec {
            b: 0.4.into(),
            sigma: 1.0.into(),
            beta: vec![],
            marks: vec![],
            intensities: vec![],
            alpha: 2.0,
            horizon: 1.0,
            claim: Claim::Constant { value: 0.0 },
            constraint: ConstraintSet::Interval { lo: -5.0, hi: 5.0 },
            s0: 1.0,
            sigma_min: DEFAULT_SIGMA_MIN,
        }
    }

    #[test]
    fn jump_spec_rejects_bad_atoms() {
        assert!(JumpSpec::new(vec![0.0], vec![1.0]).is_err());
        assert!(JumpSpec::new(vec![0.1, 0.1], vec![1.0, 1.0]).is_err());
        assert!(JumpSpec::new(vec![0.1], vec![0.0]).is_err());
        assert!(JumpSpec::new(vec![0.1], vec![1.0, 2.0]).is_err());
        let j = JumpSpec::new(vec![0.1, -0.2], vec![1.0, 2.5]).unwrap();
        assert_eq!(j.total_mass(), 3.5);
    }

    #[test]
    fn beta_at_minus_one_is_rejected() {
        let mut m = merton();
        m.marks = vec![0.3];
        m.intensities = vec![1.0];
        m.beta = vec![(-1.0).into()];
        let err = m.validate(None).unwrap_err();
        assert!(err.to_string().contains("beta > -1"), "{err}");
        m.beta = vec![(-0.99).into()];
        m.validate(None).unwrap();
    }

    #[test]
    fn sigma_floor_enforced() {
        let mut m = merton();
        m.sigma = 0.0.into();
        assert!(m.validate(None).is_err());
    }

    #[test]
    fn truncation_is_nested_and_compact() {
        let c = ConstraintSet::HalfLine { lo: 0.0 };
        let mut prev = c.truncate(0.5).unwrap().bounds().unwrap();
        for m in 1..10 {
            let cur = c.truncate(m as f64).unwrap().bounds().unwrap();
            assert!(cur.0 <= prev.0 && prev.1 <= cur.1);
            prev = cur;
        }
        assert_eq!(
            ConstraintSet::Interval { lo: 2.0, hi: 3.0 }.truncate(1.0),
            Err(Error::EmptyConstraint)
        );
        assert_eq!(
            ConstraintSet::WholeLine.truncate(2.0).unwrap(),
            ConstraintSet::Interval { lo: -2.0, hi: 2.0 }
        );
    }

    #[test]
    fn claims_are_bounded() {
        assert_eq!(Claim::Constant { value: -0.7 }.sup_norm().unwrap(), 0.7);
        assert!(Claim::Call {
            strike: 1.0,
            cap: None
        }
        .sup_norm()
        .is_err());
        let call = Claim::Call {
            strike: 1.0,
            cap: Some(0.5),
        };
        assert_eq!(call.payoff(3.0), 0.5);
        assert_eq!(call.payoff(1.2), 1.2 - 1.0);
        let put = Claim::Put { strike: 1.0 };
        assert_eq!(put.sup_norm().unwrap(), 1.0);
        assert_eq!(put.payoff(0.25), 0.75);
    }

    #[test]
    fn grid_checks() {
        let g = TimeGrid::uniform(4, 2.0).unwrap();
        assert_eq!(g.horizon(), 2.0);
        assert_eq!(g.dt(1), 0.5);
        assert!(TimeGrid::from_nodes(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::uniform(0, 1.0).is_err());
    }

    #[test]
    fn step_fn_lengths_checked() {
        let mut m = merton();
        m.b = StepFn::Steps(vec![0.1, 0.2, 0.3]);
        assert!(m.validate(Some(3)).is_ok());
        assert!(m.validate(Some(4)).is_err());
        assert_eq!(m.b_at(2), 0.3);
    }
}
