//! Exact answers for every objective, plus an independent grid oracle.
//!
//! Max-return is solved by a greedy fill. Variance, CVaR, maximum drawdown
//! and the Sharpe ratio are minimized with an ellipsoid method using
//! objective-specific cuts; variance solutions are finished with an
//! active-set step. Asset-count constraints enumerate supports.

mod constraints;
mod ellipsoid;
mod oracle;
pub mod projection;
mod solve;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

pub use constraints::{feasible, ConstraintSet, BOUND_TOL, DEFAULT_MIN_ACTIVE_WEIGHT};
pub use oracle::{composition_count, oracle_solve, MAX_GRID_POINTS};

use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::metrics::{self, ObjectiveSpec, Portfolio};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// The constraints admit a single portfolio.
    Fixed,
    Greedy,
    Ellipsoid,
    ActiveSet,
    PatternSearch,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub portfolio: Portfolio,
    /// Canonical (lower is better) objective value of `portfolio`.
    pub objective_value: f64,
    pub method: SolveMethod,
    /// Solver iterations, or objective evaluations for the grid oracle.
    pub iterations: usize,
    /// Whether the result was checked against the grid oracle.
    pub verified: bool,
    /// Max-Sharpe with no feasible positive excess return.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative tolerance against the oracle when verifying.
    pub tol: f64,
    /// Absolute floor on the tolerance.
    pub abs_tol: f64,
    /// Grid step for verification; `None` skips it.
    pub verify_step: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            abs_tol: 1e-8,
            verify_step: None,
        }
    }
}

/// Folds the objective's return floor into the constraints.
pub(crate) fn effective_constraints(obj: &ObjectiveSpec, c: &ConstraintSet) -> ConstraintSet {
    let mut c = *c;
    c.min_return = match (c.min_return, obj.mu0) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    c
}

/// Optimal portfolio for `obj` under `c`.
pub fn solve(obj: &ObjectiveSpec, c: &ConstraintSet, r: &ReturnsMatrix, opts: &SolveOptions) -> Result<SolveReport> {
    obj.validate()?;
    c.validate(r.assets())?;
    let report = if c.asset_count.is_some() {
        solve_with_cardinality(obj, c, r, opts)?
    } else {
        let ec = effective_constraints(obj, c);
        let sol = solve::solve_box(
            obj,
            solve::Box {
                lo: ec.lower,
                hi: ec.upper,
                floor: ec.min_return,
            },
            r,
        )?;
        finish(obj, r, sol.weights, sol.method, sol.iterations, sol.degenerate)?
    };
    verify(obj, c, r, opts, report)
}

fn finish(
    obj: &ObjectiveSpec,
    r: &ReturnsMatrix,
    weights: Vec<f64>,
    method: SolveMethod,
    iterations: usize,
    degenerate: bool,
) -> Result<SolveReport> {
    let portfolio = Portfolio::new(weights)?;
    let objective_value = metrics::objective_value(obj, r, &portfolio).map_err(|e| match e {
        Error::DegenerateMetric(m) => Error::DegenerateObjective(m),
        other => other,
    })?;
    Ok(SolveReport {
        portfolio,
        objective_value,
        method,
        iterations,
        verified: false,
        degenerate,
    })
}

fn verify(
    obj: &ObjectiveSpec,
    c: &ConstraintSet,
    r: &ReturnsMatrix,
    opts: &SolveOptions,
    mut report: SolveReport,
) -> Result<SolveReport> {
    if let Some(step) = opts.verify_step {
        let oracle = oracle_solve(obj, c, r, step, true)?;
        let slack = (opts.tol * oracle.objective_value.abs()).max(opts.abs_tol);
        if report.objective_value > oracle.objective_value + slack {
            return Err(Error::VerificationFailed {
                solver: report.objective_value,
                oracle: oracle.objective_value,
            });
        }
        report.verified = true;
    }
    Ok(report)
}

/// Best portfolio holding exactly `k` assets, each at weight at least
/// `max(lower, min_active_weight)`: every `k`-subset is solved and the best
/// kept, ties going to the lexicographically smallest weight vector.
pub fn solve_with_cardinality(
    obj: &ObjectiveSpec,
    c: &ConstraintSet,
    r: &ReturnsMatrix,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    obj.validate()?;
    let n = r.assets();
    c.validate(n)?;
    let k = c
        .asset_count
        .ok_or_else(|| Error::Parameter("solve_with_cardinality needs asset_count".into()))?;
    let ec = effective_constraints(obj, c);
    let b = solve::Box {
        lo: ec.active_lower(),
        hi: ec.upper,
        floor: ec.min_return,
    };
    let mut best: Option<SolveReport> = None;
    let mut last_error = None;
    let mut iterations = 0;
    for subset in (0..n).combinations(k) {
        let sub = r.select_assets(&subset);
        let sol = match solve::solve_box(obj, b, &sub) {
            Ok(s) => s,
            Err(e @ (Error::Infeasible(_) | Error::DegenerateObjective(_))) => {
                last_error = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        iterations += sol.iterations;
        let mut w = vec![0.0; n];
        for (&i, x) in subset.iter().zip(&sol.weights) {
            w[i] = *x;
        }
        let candidate = finish(obj, r, w, sol.method, sol.iterations, sol.degenerate)?;
        let better = match &best {
            None => true,
            Some(b) => {
                candidate.objective_value < b.objective_value
                    || (candidate.objective_value == b.objective_value
                        && candidate.portfolio.weights() < b.portfolio.weights())
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    let mut report = best.ok_or_else(|| {
        last_error.unwrap_or_else(|| Error::Infeasible(format!("no {k}-asset subset is feasible")))
    })?;
    report.iterations = iterations;
    verify(obj, c, r, opts, report)
}
