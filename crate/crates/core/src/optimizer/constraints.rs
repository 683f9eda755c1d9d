use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::metrics::BUDGET_TOL;

/// Slack allowed on weight bounds and the inclusion floor.
pub const BOUND_TOL: f64 = 1e-9;

pub const DEFAULT_MIN_ACTIVE_WEIGHT: f64 = 0.01;

/// Constraints on a long-only, fully invested portfolio. Bounds apply to
/// every asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSet {
    pub lower: f64,
    pub upper: f64,
    /// Exact number of assets holding at least `min_active_weight`; the rest
    /// hold nothing.
    pub asset_count: Option<usize>,
    pub min_active_weight: f64,
    /// Minimum mean return.
    pub min_return: Option<f64>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
            asset_count: None,
            min_active_weight: DEFAULT_MIN_ACTIVE_WEIGHT,
            min_return: None,
        }
    }
}

impl ConstraintSet {
    pub fn with_lower(lower: f64) -> Self {
        Self {
            lower,
            ..Self::default()
        }
    }

    pub fn with_upper(upper: f64) -> Self {
        Self {
            upper,
            ..Self::default()
        }
    }

    pub fn with_asset_count(k: usize) -> Self {
        Self {
            asset_count: Some(k),
            ..Self::default()
        }
    }

    /// True when nothing beyond budget and no-short applies.
    pub fn is_unconstrained(&self) -> bool {
        self.lower == 0.0 && self.upper == 1.0 && self.asset_count.is_none() && self.min_return.is_none()
    }

    /// Lower bound on the assets that are held.
    pub fn active_lower(&self) -> f64 {
        match self.asset_count {
            Some(_) => self.lower.max(self.min_active_weight),
            None => self.lower,
        }
    }

    /// Checks parameter ranges and that some portfolio of `n` assets
    /// satisfies the weight constraints.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Parameter("no assets".into()));
        }
        if !(0.0..1.0).contains(&self.lower) {
            return Err(Error::Parameter(format!("lower bound {} outside [0, 1)", self.lower)));
        }
        if !(self.upper > 0.0 && self.upper <= 1.0) {
            return Err(Error::Parameter(format!("upper bound {} outside (0, 1]", self.upper)));
        }
        if !(0.0..=1.0).contains(&self.min_active_weight) {
            return Err(Error::Parameter(format!(
                "min_active_weight {} outside [0, 1]",
                self.min_active_weight
            )));
        }
        if self.min_return.is_some_and(|m| !m.is_finite()) {
            return Err(Error::Parameter("min_return must be finite".into()));
        }
        if self.lower > self.upper {
            return Err(Error::Infeasible(format!(
                "lower bound {} exceeds upper bound {}",
                self.lower, self.upper
            )));
        }
        let held = match self.asset_count {
            None => n,
            Some(0) => return Err(Error::Parameter("asset_count must be positive".into())),
            Some(k) if k > n => {
                return Err(Error::Infeasible(format!("asset_count {k} exceeds the {n} available assets")))
            }
            Some(k) if k < n && self.lower > 0.0 => {
                return Err(Error::Infeasible(format!(
                    "asset_count {k} < {n} leaves assets at zero, below the lower bound {}",
                    self.lower
                )))
            }
            Some(k) => k,
        };
        let lo = self.active_lower();
        if held as f64 * lo > 1.0 + BUDGET_TOL {
            return Err(Error::Infeasible(format!("{held} assets at weight >= {lo} exceed the budget")));
        }
        if (held as f64) * self.upper < 1.0 - BUDGET_TOL {
            return Err(Error::Infeasible(format!(
                "{held} assets at weight <= {} cannot reach the budget",
                self.upper
            )));
        }
        Ok(())
    }

    /// Budget, bounds and asset count, ignoring `min_return`.
    pub fn admits(&self, w: &[f64]) -> bool {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > BUDGET_TOL {
            return false;
        }
        if w.iter().any(|x| !x.is_finite() || *x < self.lower - BOUND_TOL || *x > self.upper + BOUND_TOL) {
            return false;
        }
        match self.asset_count {
            None => true,
            Some(k) => {
                let floor = self.min_active_weight - BOUND_TOL;
                let held = w.iter().filter(|x| **x >= floor).count();
                let stray = w.iter().any(|x| *x > BOUND_TOL && *x < floor);
                held == k && !stray
            }
        }
    }
}

/// Whether `w` satisfies every constraint in `c`, including the return floor
/// evaluated on `r`.
pub fn feasible(w: &[f64], c: &ConstraintSet, r: &ReturnsMatrix) -> bool {
    if w.len() != r.assets() || !c.admits(w) {
        return false;
    }
    match c.min_return {
        None => true,
        Some(mu0) => {
            let mu = r.means();
            let m: f64 = w.iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
            m >= mu0 - BOUND_TOL * mu0.abs().max(1e-12)
        }
    }
}
