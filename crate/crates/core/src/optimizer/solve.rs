//! Continuous solves on a fixed asset set with uniform weight bounds.

use nalgebra::{DMatrix, DVector};

use super::ellipsoid::{self, dot, Probe, Region};
use super::oracle;
use super::SolveMethod;
use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::metrics::{self, ObjectiveKind, ObjectiveSpec};

pub(crate) struct Continuous {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub method: SolveMethod,
    pub degenerate: bool,
}

/// Bounds shared by every asset plus an optional floor on the mean return.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Box {
    pub lo: f64,
    pub hi: f64,
    pub floor: Option<f64>,
}

pub(crate) fn solve_box(obj: &ObjectiveSpec, b: Box, r: &ReturnsMatrix) -> Result<Continuous> {
    let n = r.assets();
    let mu: Vec<f64> = r.means().iter().copied().collect();

    if n as f64 * b.lo >= 1.0 - 1e-12 || n as f64 * b.hi <= 1.0 + 1e-12 {
        let w = vec![1.0 / n as f64; n];
        check_floor(&w, &mu, b.floor)?;
        if obj.kind == ObjectiveKind::MaxSharpe {
            metrics::objective_value(obj, r, &w).map_err(degenerate_sharpe)?;
        }
        return Ok(Continuous {
            weights: w,
            iterations: 0,
            method: SolveMethod::Fixed,
            degenerate: false,
        });
    }

    let region = Region {
        n,
        lo: b.lo,
        hi: b.hi,
        floor: b.floor.map(|m| (mu.as_slice(), m)),
    };

    match obj.kind {
        ObjectiveKind::MaxReturn => {
            let w = greedy_max_return(&mu, b.lo, b.hi);
            check_floor(&w, &mu, b.floor)?;
            Ok(Continuous {
                weights: w,
                iterations: n,
                method: SolveMethod::Greedy,
                degenerate: false,
            })
        }
        ObjectiveKind::MinVariance => {
            let cov = r.covariance();
            let out = ellipsoid::minimize(&region, |w, best| Ok(variance_cut(&cov, w, best)))?
                .ok_or_else(no_feasible_point)?;
            let mut method = SolveMethod::Ellipsoid;
            let mut weights = out.weights;
            let floor_slack = b.floor.map(|m| dot(&mu, &weights) - m);
            if floor_slack.is_none_or(|s| s > 1e-9) {
                if let Some(polished) = polish_variance(&cov, &weights, b.lo, b.hi) {
                    let before = quad_form(&cov, &weights);
                    let after = quad_form(&cov, &polished);
                    if after <= before && b.floor.is_none_or(|m| dot(&mu, &polished) >= m) {
                        weights = polished;
                        method = SolveMethod::ActiveSet;
                    }
                }
            }
            Ok(Continuous {
                weights,
                iterations: out.iterations,
                method,
                degenerate: false,
            })
        }
        ObjectiveKind::MinCvar => {
            let k = (1.0 - obj.beta) * r.periods() as f64;
            let out = ellipsoid::minimize(&region, |w, best| Ok(cvar_cut(r, k, w, best)))?
                .ok_or_else(no_feasible_point)?;
            Ok(ellipsoid_result(out.weights, out.iterations))
        }
        ObjectiveKind::MinMdd => {
            let out = ellipsoid::minimize(&region, |w, best| Ok(drawdown_cut(r, w, best)))?
                .ok_or_else(no_feasible_point)?;
            Ok(ellipsoid_result(out.weights, out.iterations))
        }
        ObjectiveKind::MaxSharpe => solve_sharpe(obj, b, r, &mu, &region),
    }
}

fn ellipsoid_result(weights: Vec<f64>, iterations: usize) -> Continuous {
    Continuous {
        weights,
        iterations,
        method: SolveMethod::Ellipsoid,
        degenerate: false,
    }
}

fn no_feasible_point() -> Error {
    Error::Infeasible("no portfolio satisfies the bounds and the return floor".into())
}

fn degenerate_sharpe(e: Error) -> Error {
    match e {
        Error::DegenerateMetric(m) => Error::DegenerateObjective(m),
        other => other,
    }
}

fn check_floor(w: &[f64], mu: &[f64], floor: Option<f64>) -> Result<()> {
    match floor {
        Some(m) if dot(w, mu) < m => Err(Error::Infeasible(format!(
            "the highest attainable mean return {} is below the floor {m}",
            dot(w, mu)
        ))),
        _ => Ok(()),
    }
}

/// Fills assets in decreasing order of mean, each up to `hi`, after giving
/// every asset `lo`. Among equal means the later asset is filled first,
/// which yields the lexicographically smallest optimal vector.
pub(crate) fn greedy_max_return(mu: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = mu.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]).then(b.cmp(&a)));
    let mut w = vec![lo; n];
    let mut remaining = 1.0 - n as f64 * lo;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let add = (hi - lo).min(remaining);
        w[i] += add;
        remaining -= add;
    }
    w
}

fn quad_form(cov: &DMatrix<f64>, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    v.dot(&(cov * &v))
}

fn variance_cut(cov: &DMatrix<f64>, w: &[f64], best: Option<f64>) -> Probe {
    let v = DVector::from_column_slice(w);
    let sv = cov * &v;
    let value = v.dot(&sv);
    Probe::Cut {
        value,
        grad: sv.iter().map(|g| 2.0 * g).collect(),
        depth: best.map_or(0.0, |b| (value - b).max(0.0)),
    }
}

/// Solves the equality-constrained problem on the free assets of `w`, with
/// assets near a bound held there, and accepts the result only if it
/// satisfies the bounds and the KKT sign conditions.
fn polish_variance(cov: &DMatrix<f64>, w: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    const ACTIVE: f64 = 1e-7;
    let n = w.len();
    let mut fixed = vec![None; n];
    for i in 0..n {
        if w[i] <= lo + ACTIVE {
            fixed[i] = Some(lo);
        } else if w[i] >= hi - ACTIVE {
            fixed[i] = Some(hi);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    if free.is_empty() {
        return None;
    }
    let f = free.len();
    let fixed_sum: f64 = fixed.iter().flatten().sum();
    let mut kkt = DMatrix::zeros(f + 1, f + 1);
    let mut rhs = DVector::zeros(f + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = 2.0 * cov[(i, j)];
        }
        kkt[(a, f)] = -1.0;
        kkt[(f, a)] = 1.0;
        rhs[a] = -2.0
            * (0..n)
                .filter_map(|j| fixed[j].map(|x| cov[(i, j)] * x))
                .sum::<f64>();
    }
    rhs[f] = 1.0 - fixed_sum;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        if let Some(x) = fixed[i] {
            out[i] = x;
        }
    }
    for (a, &i) in free.iter().enumerate() {
        if sol[a] < lo - 1e-12 || sol[a] > hi + 1e-12 {
            return None;
        }
        out[i] = sol[a].clamp(lo, hi);
    }
    let lambda = sol[f];
    let grad = cov * DVector::from_column_slice(&out) * 2.0;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-300);
    for i in 0..n {
        match fixed[i] {
            Some(x) if x == lo && grad[i] - lambda < -1e-9 * scale => return None,
            Some(x) if x == hi && x != lo && grad[i] - lambda > 1e-9 * scale => return None,
            _ => {}
        }
    }
    Some(out)
}

fn cvar_cut(r: &ReturnsMatrix, k: f64, w: &[f64], best: Option<f64>) -> Probe {
    let t = r.periods();
    let n = r.assets();
    let port: Vec<f64> = r.rows().map(|row| dot(row, w)).collect();
    let mut idx: Vec<usize> = (0..t).collect();
    let m = (k.floor() as usize).min(t);
    let frac = k - m as f64;
    if m < t {
        idx.select_nth_unstable_by(m, |&a, &b| port[a].total_cmp(&port[b]));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for &s in &idx[..m] {
        loss -= port[s];
        for (g, x) in grad.iter_mut().zip(r.row(s)) {
            *g -= x;
        }
    }
    if m < t && frac > 0.0 {
        let s = idx[m];
        loss -= frac * port[s];
        for (g, x) in grad.iter_mut().zip(r.row(s)) {
            *g -= frac * x;
        }
    }
    let value = loss / k;
    for g in grad.iter_mut() {
        *g /= k;
    }
    Probe::Cut {
        value,
        grad,
        depth: best.map_or(0.0, |b| (value - b).max(0.0)),
    }
}

/// Maximum drawdown as `1 - exp(G)` with `G` the smallest log-growth over
/// any peak-to-later-point interval. `G` is concave in the weights, so its
/// supergradient on the worst interval gives a valid cut.
fn drawdown_cut(r: &ReturnsMatrix, w: &[f64], best: Option<f64>) -> Probe {
    let port: Vec<f64> = r.rows().map(|row| dot(row, w)).collect();
    let mut level = 0.0f64;
    let mut peak = 0.0f64;
    let mut peak_at = 0usize;
    let mut worst = 0.0f64;
    let mut span = (0usize, 0usize);
    for (t, p) in port.iter().enumerate() {
        level += p.ln_1p();
        if level > peak {
            peak = level;
            peak_at = t + 1;
        } else if peak - level > worst {
            worst = peak - level;
            span = (peak_at, t + 1);
        }
    }
    let value = -(-worst).exp_m1();
    if worst == 0.0 {
        return Probe::Optimal { value };
    }
    let mut grad = vec![0.0; w.len()];
    for u in span.0..span.1 {
        let scale = 1.0 / (1.0 + port[u]);
        for (g, x) in grad.iter_mut().zip(r.row(u)) {
            *g -= x * scale;
        }
    }
    let target = best.map_or(value, |b| b.min(value));
    Probe::Cut {
        value,
        grad,
        depth: ((-target).ln_1p() + worst).max(0.0),
    }
}

fn solve_sharpe(
    obj: &ObjectiveSpec,
    b: Box,
    r: &ReturnsMatrix,
    mu: &[f64],
    region: &Region<'_>,
) -> Result<Continuous> {
    let start = greedy_max_return(mu, b.lo, b.hi);
    check_floor(&start, mu, b.floor)?;
    if dot(&start, mu) - obj.rf <= 0.0 {
        return sharpe_fallback(obj, b, r);
    }
    let cov = r.covariance();
    let ratio = |w: &[f64]| -> Result<(f64, f64, DVector<f64>)> {
        let v = DVector::from_column_slice(w);
        let sv = &cov * &v;
        let sigma = v.dot(&sv).max(0.0).sqrt();
        let excess = dot(w, mu) - obj.rf;
        if metrics::is_zero_volatility(sigma, dot(w, mu)) {
            if excess > 0.0 {
                return Err(Error::DegenerateObjective(
                    "a zero-volatility portfolio with positive excess return is feasible".into(),
                ));
            }
            return Ok((f64::NEG_INFINITY, sigma, sv));
        }
        Ok((excess / sigma, sigma, sv))
    };
    let (start_ratio, _, _) = ratio(&start)?;

    let out = ellipsoid::minimize(region, |w, best| {
        let (s, sigma, sv) = ratio(w)?;
        let excess = dot(w, mu) - obj.rf;
        let reference = start_ratio.max(s).max(best.map_or(f64::NEG_INFINITY, |b| -b));
        let h = reference * sigma - excess;
        let grad: Vec<f64> = if sigma > 0.0 {
            sv.iter().zip(mu).map(|(g, m)| reference * g / sigma - m).collect()
        } else {
            mu.iter().map(|m| -m).collect()
        };
        Ok(Probe::Cut {
            value: -s,
            grad,
            depth: h.max(0.0),
        })
    })?;

    let (weights, iterations) = match out {
        Some(o) if o.value < -start_ratio => (o.weights, o.iterations),
        Some(o) => (start, o.iterations),
        None => (start, 0),
    };
    Ok(Continuous {
        weights,
        iterations,
        method: SolveMethod::Ellipsoid,
        degenerate: false,
    })
}

/// All feasible excess returns are non-positive, so superlevel sets of the
/// ratio are no longer convex. Falls back to a grid followed by a pattern
/// search over pairwise weight transfers.
fn sharpe_fallback(obj: &ObjectiveSpec, b: Box, r: &ReturnsMatrix) -> Result<Continuous> {
    let n = r.assets();
    let mu: Vec<f64> = r.means().iter().copied().collect();
    let eval = |w: &[f64]| -> Option<f64> {
        if b.floor.is_some_and(|m| dot(w, &mu) < m) {
            return None;
        }
        metrics::objective_value(obj, r, w).ok()
    };
    let m = [100u32, 50, 20, 10, 5, 2, 1]
        .into_iter()
        .find(|&m| oracle::composition_count(m, n) <= 200_000)
        .unwrap_or(1);
    let step = 1.0 / m as f64;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    oracle::for_each_composition(n, m, b.lo, b.hi, step, |counts| {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64 * step).collect();
        evaluations += 1;
        if let Some(v) = eval(&w) {
            if best.as_ref().is_none_or(|x| v < x.1) {
                best = Some((w, v));
            }
        }
    });
    let (mut w, mut value) = match best {
        Some(b) => b,
        None => {
            let w = vec![1.0 / n as f64; n];
            let v = eval(&w).ok_or_else(|| {
                Error::DegenerateObjective("no feasible portfolio has a defined Sharpe ratio".into())
            })?;
            (w, v)
        }
    };
    let mut h = step / 2.0;
    while h > 1e-10 && evaluations < 1_000_000 {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || w[i] + h > b.hi || w[j] - h < b.lo {
                    continue;
                }
                let mut c = w.clone();
                c[i] += h;
                c[j] -= h;
                evaluations += 1;
                if let Some(v) = eval(&c) {
                    if v < value {
                        w = c;
                        value = v;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            h /= 2.0;
        }
    }
    Ok(Continuous {
        weights: w,
        iterations: evaluations,
        method: SolveMethod::PatternSearch,
        degenerate: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_waterfall() {
        let w = greedy_max_return(&[0.03, 0.02, 0.01], 0.0, 0.6);
        assert_eq!(w, [0.6, 0.4, 0.0]);
        let w = greedy_max_return(&[0.01, 0.02, 0.03], 0.1, 0.7);
        assert!((w[2] - 0.7).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15 && w[0] == 0.1);
    }

    #[test]
    fn greedy_ties_prefer_later_assets() {
        let w = greedy_max_return(&[0.02, 0.02], 0.0, 0.6);
        assert_eq!(w, [0.4, 0.6]);
    }
}
