//! Central and deep-cut ellipsoid method over the box-constrained simplex.
//!
//! The search runs in reduced coordinates `x ∈ R^(n-1)` with the last weight
//! implied by the budget, `w_n = 1 - Σx`. Each iteration either cuts away a
//! violated linear constraint or asks the objective oracle for a cut that
//! keeps every point at least as good as the best feasible point seen.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Linear constraints of the search region, in weight space.
pub(crate) struct Region<'a> {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    /// Mean returns and the floor on `μᵀw`.
    pub floor: Option<(&'a [f64], f64)>,
}

/// Oracle answer at a feasible point.
pub(crate) enum Probe {
    /// Every point with value `<= min(best, value)` satisfies
    /// `grad·(y - w) <= -depth`, with `grad` in weight coordinates.
    Cut { value: f64, grad: Vec<f64>, depth: f64 },
    /// The point is known to be optimal.
    Optimal { value: f64 },
}

pub(crate) struct Outcome {
    pub weights: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

const SIZE_TOL: f64 = 1e-10;
const INTERVAL_TOL: f64 = 1e-13;

impl Region<'_> {
    fn weights(&self, x: &[f64]) -> Vec<f64> {
        let mut w = x.to_vec();
        w.push(1.0 - x.iter().sum::<f64>());
        w
    }

    /// Rows `(a, b)` of `a·x <= b` in reduced coordinates.
    fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        let d = self.n - 1;
        let mut rows = Vec::with_capacity(2 * self.n + 1);
        for i in 0..d {
            let mut a = vec![0.0; d];
            a[i] = -1.0;
            rows.push((a.clone(), -self.lo));
            a[i] = 1.0;
            rows.push((a, self.hi));
        }
        rows.push((vec![1.0; d], 1.0 - self.lo));
        rows.push((vec![-1.0; d], self.hi - 1.0));
        if let Some((mu, mu0)) = self.floor {
            let last = mu[d];
            rows.push(((0..d).map(|i| last - mu[i]).collect(), last - mu0));
        }
        rows
    }
}

fn reduce(grad: &[f64]) -> Vec<f64> {
    let last = *grad.last().expect("nonempty gradient");
    grad[..grad.len() - 1].iter().map(|g| g - last).collect()
}

/// Minimizes over `region` using `probe(w, best)`. Returns the best feasible
/// point found together with the projection of the final center, whichever
/// is better, or `None` when no feasible point was seen.
pub(crate) fn minimize<F>(region: &Region<'_>, mut probe: F) -> Result<Option<Outcome>>
where
    F: FnMut(&[f64], Option<f64>) -> Result<Probe>,
{
    let n = region.n;
    if n == 1 {
        let w = vec![1.0];
        let value = match probe(&w, None)? {
            Probe::Cut { value, .. } | Probe::Optimal { value } => value,
        };
        return Ok(Some(Outcome {
            weights: w,
            value,
            iterations: 1,
        }));
    }
    let d = n - 1;
    let rows = region.rows();
    let center = 1.0 / n as f64;
    let spread = (center - region.lo).abs().max((region.hi - center).abs());
    let radius = (d as f64).sqrt() * spread * 1.01 + 1e-9;

    let mut x = DVector::from_element(d, center);
    let mut p = DMatrix::from_diagonal_element(d, d, radius * radius);
    let mut interval = (center - radius, center + radius);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let max_iter = 2_000 + 500 * d * (d + 1);
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let xs = x.as_slice();

        let violated = rows
            .iter()
            .filter_map(|(a, b)| {
                let excess = dot(a, xs) - b;
                (excess > 0.0).then(|| {
                    let spread = quad(&p, a).max(f64::MIN_POSITIVE).sqrt();
                    (excess / spread, a.clone(), excess)
                })
            })
            .max_by(|l, r| l.0.total_cmp(&r.0));

        let (g, depth) = match violated {
            Some((_, a, excess)) => (a, excess),
            None => {
                let w = region.weights(xs);
                match probe(&w, best.as_ref().map(|b| b.1))? {
                    Probe::Optimal { value } => {
                        if best.as_ref().is_none_or(|b| value < b.1) {
                            best = Some((w, value));
                        }
                        break;
                    }
                    Probe::Cut { value, grad, depth } => {
                        if best.as_ref().is_none_or(|b| value < b.1) {
                            best = Some((w, value));
                        }
                        (reduce(&grad), depth.max(0.0))
                    }
                }
            }
        };

        if g.iter().all(|v| *v == 0.0) {
            break;
        }

        if d == 1 {
            let (lo, hi) = &mut interval;
            let bound = xs[0] - depth / g[0];
            if g[0] > 0.0 {
                *hi = hi.min(bound);
            } else {
                *lo = lo.max(bound);
            }
            if *hi < *lo || *hi - *lo <= INTERVAL_TOL {
                if *hi >= *lo {
                    x[0] = 0.5 * (*lo + *hi);
                }
                break;
            }
            x[0] = 0.5 * (*lo + *hi);
            continue;
        }

        let gv = DVector::from_vec(g);
        let pg = &p * &gv;
        let gpg = gv.dot(&pg);
        if !(gpg > 0.0 && gpg.is_finite()) {
            break;
        }
        let root = gpg.sqrt();
        let alpha = depth / root;
        if alpha >= 1.0 {
            break;
        }
        let df = d as f64;
        let step = (1.0 + df * alpha) / (df + 1.0);
        x -= &pg * (step / root);
        let shrink = df * df / (df * df - 1.0) * (1.0 - alpha * alpha);
        let rank_one = 2.0 * (1.0 + df * alpha) / ((df + 1.0) * (1.0 + alpha));
        p = (&p - (&pg * pg.transpose()) * (rank_one / gpg)) * shrink;
        // Keep P symmetric against rounding drift.
        p = (&p + p.transpose()) * 0.5;
        if p.trace().max(0.0).sqrt() <= SIZE_TOL {
            break;
        }
    }

    let projected = super::projection::project_box_simplex(&region.weights(x.as_slice()), region.lo, region.hi);
    if region.floor.is_none_or(|(mu, mu0)| dot(mu, &projected) >= mu0) {
        let value = match probe(&projected, best.as_ref().map(|b| b.1))? {
            Probe::Cut { value, .. } | Probe::Optimal { value } => value,
        };
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((projected, value));
        }
    }

    Ok(best.map(|(weights, value)| Outcome {
        weights,
        value,
        iterations,
    }))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(p: &DMatrix<f64>, a: &[f64]) -> f64 {
    let v = DVector::from_column_slice(a);
    v.dot(&(p * &v))
}
