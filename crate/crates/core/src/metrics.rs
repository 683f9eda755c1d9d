//! Portfolio statistics and the five objectives, all oriented so that lower
//! is better.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;

pub const DEFAULT_BETA: f64 = 0.95;
pub const DEFAULT_RF: f64 = 0.0;

/// Tolerance on the budget constraint.
pub const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    MinVariance,
    MaxReturn,
    MaxSharpe,
    #[serde(rename = "min_mdd")]
    MinMdd,
    #[serde(rename = "min_cvar")]
    MinCvar,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::MinVariance,
        ObjectiveKind::MaxReturn,
        ObjectiveKind::MaxSharpe,
        ObjectiveKind::MinMdd,
        ObjectiveKind::MinCvar,
    ];

    /// Identifier used in configs and file formats.
    pub fn key(self) -> &'static str {
        match self {
            ObjectiveKind::MinVariance => "min_variance",
            ObjectiveKind::MaxReturn => "max_return",
            ObjectiveKind::MaxSharpe => "max_sharpe",
            ObjectiveKind::MinMdd => "min_mdd",
            ObjectiveKind::MinCvar => "min_cvar",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.key() == key)
    }

    /// Wording used in the question prompt.
    pub fn prompt_name(self) -> &'static str {
        match self {
            ObjectiveKind::MinVariance => "Lowest Volatility",
            ObjectiveKind::MaxReturn => "Highest Return",
            ObjectiveKind::MaxSharpe => "Highest Sharpe Ratio",
            ObjectiveKind::MinMdd => "Lowest Maximum Drawdown",
            ObjectiveKind::MinCvar => "Lowest CVaR",
        }
    }

    /// Row label used in accuracy tables.
    pub fn report_name(self) -> &'static str {
        match self {
            ObjectiveKind::MinVariance => "Min variance",
            ObjectiveKind::MaxReturn => "Max return",
            ObjectiveKind::MaxSharpe => "Max Sharpe ratio",
            ObjectiveKind::MinMdd => "Min MDD",
            ObjectiveKind::MinCvar => "Min CVaR",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// An objective and its parameters. `rf` is a per-period rate and only used
/// by [`ObjectiveKind::MaxSharpe`]; `beta` only by [`ObjectiveKind::MinCvar`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub rf: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Minimum mean return; adds a linear constraint when set.
    #[serde(default)]
    pub mu0: Option<f64>,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            rf: DEFAULT_RF,
            beta: DEFAULT_BETA,
            mu0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!("beta {} outside (0, 1)", self.beta)));
        }
        if !self.rf.is_finite() {
            return Err(Error::Parameter("rf must be finite".into()));
        }
        if self.mu0.is_some_and(|m| !m.is_finite()) {
            return Err(Error::Parameter("mu0 must be finite".into()));
        }
        Ok(())
    }
}

/// Long-only, fully invested weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Portfolio(Vec<f64>);

impl Portfolio {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("portfolio has no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Parameter(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > BUDGET_TOL {
            return Err(Error::Parameter(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Scales nonnegative weights to sum to one.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Parameter("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn equal(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for Portfolio {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Portfolio {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Portfolio::new(w)
    }
}

impl From<Portfolio> for Vec<f64> {
    fn from(p: Portfolio) -> Self {
        p.0
    }
}

/// Per-period portfolio returns `r_t = Σ_i w_i R[t][i]`.
pub fn portfolio_returns(r: &ReturnsMatrix, w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != r.assets() {
        return Err(Error::DimensionMismatch {
            expected: r.assets(),
            actual: w.len(),
        });
    }
    Ok(r.rows()
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect())
}

pub fn mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

/// Sample variance with the `T - 1` denominator.
pub fn variance(s: &[f64]) -> Result<f64> {
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 periods, got {}",
            s.len()
        )));
    }
    let m = mean(s);
    Ok(s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (s.len() - 1) as f64)
}

pub fn volatility(s: &[f64]) -> Result<f64> {
    variance(s).map(f64::sqrt)
}

/// Excess mean over volatility.
pub fn sharpe(s: &[f64], rf: f64) -> Result<f64> {
    let vol = volatility(s)?;
    let m = mean(s);
    if is_zero_volatility(vol, m) {
        return Err(Error::DegenerateMetric(
            "Sharpe ratio undefined for a zero-volatility series".into(),
        ));
    }
    Ok((m - rf) / vol)
}

/// Treats a volatility at the rounding-noise level of the mean as zero.
pub(crate) fn is_zero_volatility(vol: f64, mean: f64) -> bool {
    vol <= 1e-12 * mean.abs().max(1e-12)
}

/// Largest peak-to-trough decline of compounded wealth, relative to the peak.
/// Wealth starts at 1 before the first period.
pub fn max_drawdown(s: &[f64]) -> Result<f64> {
    let mut wealth = 1.0f64;
    let mut peak = 1.0f64;
    let mut worst = 0.0f64;
    for (period, &r) in s.iter().enumerate() {
        if !(r > -1.0) {
            return Err(Error::InvalidReturn { period, value: r });
        }
        wealth *= 1.0 + r;
        if wealth > peak {
            peak = wealth;
        } else {
            worst = worst.max((peak - wealth) / peak);
        }
    }
    Ok(worst)
}

/// Conditional value-at-risk of the losses `-s_t`, each with probability
/// `1/T`: the minimum over `a` of `a + Σ max(loss - a, 0) / ((1 - beta) T)`.
///
/// With losses sorted in decreasing order, `k = (1 - beta) T` and
/// `m = floor(k)`, the minimum is `(Σ_{i<m} loss_i + (k - m) loss_m) / k`.
pub fn cvar(s: &[f64], beta: f64) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InsufficientData("CVaR of an empty series".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Parameter(format!("beta {beta} outside (0, 1)")));
    }
    let mut losses: Vec<f64> = s.iter().map(|r| -r).collect();
    Ok(cvar_of_losses(&mut losses, beta))
}

/// `losses` is reordered in place.
pub(crate) fn cvar_of_losses(losses: &mut [f64], beta: f64) -> f64 {
    let t = losses.len();
    let k = (1.0 - beta) * t as f64;
    let m = (k.floor() as usize).min(t);
    if m == t {
        return losses.iter().sum::<f64>() / t as f64;
    }
    losses.select_nth_unstable_by(m, |a, b| b.total_cmp(a));
    let head: f64 = losses[..m].iter().sum();
    (head + (k - m as f64) * losses[m]) / k
}

/// Objective value of a return series, lower is better.
pub fn objective_from_series(obj: &ObjectiveSpec, s: &[f64]) -> Result<f64> {
    match obj.kind {
        ObjectiveKind::MinVariance => variance(s),
        ObjectiveKind::MaxReturn => {
            if s.is_empty() {
                return Err(Error::InsufficientData("mean of an empty series".into()));
            }
            Ok(-mean(s))
        }
        ObjectiveKind::MaxSharpe => sharpe(s, obj.rf).map(|v| -v),
        ObjectiveKind::MinMdd => max_drawdown(s),
        ObjectiveKind::MinCvar => cvar(s, obj.beta),
    }
}

/// Canonical objective value of `w` on `r`: variance, negated mean, negated
/// Sharpe ratio, maximum drawdown or CVaR.
pub fn objective_value(obj: &ObjectiveSpec, r: &ReturnsMatrix, w: &[f64]) -> Result<f64> {
    objective_from_series(obj, &portfolio_returns(r, w)?)
}
