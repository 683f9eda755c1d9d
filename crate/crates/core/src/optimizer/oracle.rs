//! Exhaustive grid search over weight compositions, used to certify solver
//! output.

use super::constraints::{feasible, ConstraintSet};
use super::{effective_constraints, SolveMethod, SolveReport};
use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::metrics::{self, ObjectiveSpec, Portfolio};

/// Largest grid the oracle will enumerate.
pub const MAX_GRID_POINTS: u128 = 5_000_000;

/// Refinement uses a full lattice up to this many points, pairwise transfers
/// beyond it.
const MAX_LATTICE_POINTS: u128 = 250_000;

/// Number of compositions of `m` into `n` nonnegative parts, `C(m+n-1, n-1)`.
pub fn composition_count(m: u32, n: usize) -> u128 {
    if n == 0 {
        return 0;
    }
    let k = (n - 1) as u128;
    let top = m as u128 + k;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul(top - i) / (i + 1);
    }
    c
}

/// Visits every vector of counts summing to `m` whose entries times `step`
/// lie in `[lo, hi]`, in increasing lexicographic order.
pub(crate) fn for_each_composition(
    n: usize,
    m: u32,
    lo: f64,
    hi: f64,
    step: f64,
    mut visit: impl FnMut(&[u32]),
) {
    let lo_c = ((lo / step) - 1e-9).ceil().max(0.0) as u32;
    let hi_c = (((hi / step) + 1e-9).floor() as u32).min(m);
    if lo_c > hi_c {
        return;
    }
    let mut counts = vec![0u32; n];
    fn rec(i: usize, left: u32, lo: u32, hi: u32, counts: &mut [u32], visit: &mut dyn FnMut(&[u32])) {
        let n = counts.len();
        let rest = (n - i - 1) as u32;
        if i + 1 == n {
            if left >= lo && left <= hi {
                counts[i] = left;
                visit(counts);
            }
            return;
        }
        let min_here = lo.max(left.saturating_sub(rest * hi));
        let Some(max_here) = left.checked_sub(rest * lo).map(|x| x.min(hi)) else {
            return;
        };
        for c in min_here..=max_here {
            counts[i] = c;
            rec(i + 1, left - c, lo, hi, counts, visit);
        }
    }
    rec(0, m, lo_c, hi_c, &mut counts, &mut visit);
}

struct Search<'a> {
    obj: &'a ObjectiveSpec,
    c: &'a ConstraintSet,
    r: &'a ReturnsMatrix,
    best: Option<(Vec<f64>, f64)>,
    evaluations: usize,
}

impl Search<'_> {
    fn offer(&mut self, w: Vec<f64>) -> Result<()> {
        if !feasible(&w, self.c, self.r) {
            return Ok(());
        }
        self.evaluations += 1;
        let value = match metrics::objective_value(self.obj, self.r, &w) {
            Ok(v) => v,
            Err(Error::DegenerateMetric(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        if self.best.as_ref().is_none_or(|b| value < b.1) {
            self.best = Some((w, value));
        }
        Ok(())
    }
}

/// Best grid point at resolution `step`, where `1/step` must be an integer.
/// With `refine`, one more pass searches a lattice of spacing `step/10`
/// within `step` of the winner.
pub fn oracle_solve(
    obj: &ObjectiveSpec,
    c: &ConstraintSet,
    r: &ReturnsMatrix,
    step: f64,
    refine: bool,
) -> Result<SolveReport> {
    obj.validate()?;
    let n = r.assets();
    c.validate(n)?;
    let c = effective_constraints(obj, c);
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Parameter(format!("grid step {step} outside (0, 1]")));
    }
    let m = (1.0 / step).round();
    if (m * step - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("grid step {step} does not divide 1")));
    }
    let m = m as u32;
    let estimated = composition_count(m, n);
    if estimated > MAX_GRID_POINTS {
        return Err(Error::ResourceLimit {
            estimated,
            limit: MAX_GRID_POINTS,
        });
    }

    let mut search = Search {
        obj,
        c: &c,
        r,
        best: None,
        evaluations: 0,
    };
    let mut failure = None;
    for_each_composition(n, m, c.lower, c.upper, step, |counts| {
        if failure.is_some() {
            return;
        }
        let w = counts.iter().map(|&k| k as f64 / m as f64).collect();
        if let Err(e) = search.offer(w) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let Some((winner, _)) = search.best.clone() else {
        return Err(Error::Infeasible(format!("no grid point at step {step} satisfies the constraints")));
    };

    if refine {
        let fine = 10 * m;
        let base: Vec<i64> = winner.iter().map(|w| (w * fine as f64).round() as i64).collect();
        let to_weights = |counts: &[i64]| -> Option<Vec<f64>> {
            counts
                .iter()
                .map(|&k| (k >= 0).then(|| k as f64 / fine as f64))
                .collect()
        };
        if 21u128.pow((n - 1) as u32) <= MAX_LATTICE_POINTS {
            let mut offsets = vec![-10i64; n - 1];
            loop {
                let mut counts = base.clone();
                for (k, o) in counts.iter_mut().zip(&offsets) {
                    *k += o;
                }
                counts[n - 1] = fine as i64 - counts[..n - 1].iter().sum::<i64>();
                if let Some(w) = to_weights(&counts) {
                    search.offer(w)?;
                }
                let Some(pos) = offsets.iter().rposition(|o| *o < 10) else {
                    break;
                };
                offsets[pos] += 1;
                for o in offsets[pos + 1..].iter_mut() {
                    *o = -10;
                }
            }
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    for t in -10i64..=10 {
                        if t == 0 {
                            continue;
                        }
                        let mut counts = base.clone();
                        counts[i] += t;
                        counts[j] -= t;
                        if let Some(w) = to_weights(&counts) {
                            search.offer(w)?;
                        }
                    }
                }
            }
        }
    }

    let (weights, value) = search.best.expect("winner exists");
    Ok(SolveReport {
        portfolio: Portfolio::new(weights)?,
        objective_value: value,
        method: SolveMethod::Grid,
        iterations: search.evaluations,
        verified: false,
        degenerate: false,
    })
}
