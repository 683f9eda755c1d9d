//! Wrong answers: feasible portfolios that are strictly worse than the
//! optimum, selected by distance, objective deviation, objective quantile,
//! or distance and deviation together.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::metrics::{self, ObjectiveSpec, Portfolio};
use crate::optimizer::{feasible, ConstraintSet, SolveReport};
use crate::seed;

/// Guard on the denominator of relative deviations.
pub const REL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorMethod {
    Distance,
    Threshold,
    Quantile,
    Dual,
}

impl DistractorMethod {
    pub const ALL: [DistractorMethod; 4] = [
        DistractorMethod::Distance,
        DistractorMethod::Threshold,
        DistractorMethod::Quantile,
        DistractorMethod::Dual,
    ];

    pub fn key(self) -> &'static str {
        match self {
            DistractorMethod::Distance => "distance",
            DistractorMethod::Threshold => "threshold",
            DistractorMethod::Quantile => "quantile",
            DistractorMethod::Dual => "dual",
        }
    }

    pub fn report_name(self) -> &'static str {
        match self {
            DistractorMethod::Distance => "Distance-based",
            DistractorMethod::Threshold => "Threshold-based",
            DistractorMethod::Quantile => "Quantile-based",
            DistractorMethod::Dual => "Dual-criteria",
        }
    }
}

impl fmt::Display for DistractorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A real interval, closed on the right, written `[a, b]` or `(a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: true }
    }

    pub fn left_open(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: false,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        above && x <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lo_closed { '[' } else { '(' };
        write!(f, "{open}{}, {}]", self.lo, self.hi)
    }
}

impl FromStr for Interval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("invalid interval `{s}`, expected `[a, b]` or `(a, b]`"));
        let s = s.trim();
        let lo_closed = match s.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(bad()),
        };
        let inner = s[1..].strip_suffix(']').ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let lo: f64 = a.trim().parse().map_err(|_| bad())?;
        let hi: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(bad());
        }
        Ok(Self { lo, hi, lo_closed })
    }
}

impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Default distance bins.
pub fn distance_bins() -> Vec<Interval> {
    vec![
        Interval::closed(0.0, 0.25),
        Interval::left_open(0.25, 0.5),
        Interval::left_open(0.5, 0.75),
        Interval::left_open(0.75, 1.0),
    ]
}

/// Default relative-deviation bins.
pub fn threshold_bins() -> Vec<Interval> {
    vec![
        Interval::closed(0.0, 0.25),
        Interval::left_open(0.25, 0.5),
        Interval::left_open(0.5, 0.75),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistractorSpec {
    pub method: DistractorMethod,
    /// Distance to the optimum (distance and dual methods).
    pub theta: Option<Interval>,
    /// Relative objective deviation (threshold and dual methods).
    pub delta: Option<Interval>,
    /// Rank fractions of the suboptimal pool (quantile method).
    pub quantiles: [f64; 3],
    /// Bounds on distances between distractors (dual method).
    pub pair_min: f64,
    pub pair_max: f64,
    /// Minimum relative suboptimality.
    pub margin: f64,
    /// Minimum distance between any two distractors.
    pub min_separation: f64,
    /// Candidate pool size for the quantile method.
    pub pool_size: usize,
    /// Candidate draws before giving up (filter methods).
    pub max_attempts: usize,
    /// Sample distractors from the whole simplex, ignoring the constraints.
    pub allow_infeasible: bool,
    pub seed: u64,
}

impl Default for DistractorSpec {
    fn default() -> Self {
        Self {
            method: DistractorMethod::Quantile,
            theta: None,
            delta: None,
            quantiles: [0.25, 0.5, 0.75],
            pair_min: 0.4,
            pair_max: 0.6,
            margin: 0.01,
            min_separation: 0.05,
            pool_size: 5000,
            max_attempts: 20_000,
            allow_infeasible: false,
            seed: 0,
        }
    }
}

impl DistractorSpec {
    pub fn distance(theta: Interval) -> Self {
        Self {
            method: DistractorMethod::Distance,
            theta: Some(theta),
            ..Self::default()
        }
    }

    pub fn threshold(delta: Interval) -> Self {
        Self {
            method: DistractorMethod::Threshold,
            delta: Some(delta),
            ..Self::default()
        }
    }

    pub fn quantile() -> Self {
        Self::default()
    }

    pub fn dual(theta: Interval, delta: Interval) -> Self {
        Self {
            method: DistractorMethod::Dual,
            theta: Some(theta),
            delta: Some(delta),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needs_theta = matches!(self.method, DistractorMethod::Distance | DistractorMethod::Dual);
        let needs_delta = matches!(self.method, DistractorMethod::Threshold | DistractorMethod::Dual);
        match self.theta {
            Some(t) if !(t.lo >= 0.0 && t.lo < t.hi && t.hi <= 2f64.sqrt() + 1e-12) => {
                return Err(Error::Parameter(format!("distance bounds {t} must satisfy 0 <= min < max <= sqrt(2)")))
            }
            None if needs_theta => {
                return Err(Error::Parameter(format!("{} method needs distance bounds", self.method)))
            }
            _ => {}
        }
        match self.delta {
            Some(d) if !(d.lo >= 0.0 && d.lo < d.hi) => {
                return Err(Error::Parameter(format!("deviation bounds {d} must satisfy 0 <= min < max")))
            }
            None if needs_delta => {
                return Err(Error::Parameter(format!("{} method needs deviation bounds", self.method)))
            }
            _ => {}
        }
        let q = self.quantiles;
        if !(q[0] > 0.0 && q[0] < q[1] && q[1] < q[2] && q[2] <= 1.0) {
            return Err(Error::Parameter(format!("quantiles {q:?} must be strictly increasing in (0, 1]")));
        }
        if !(self.pair_min >= 0.0 && self.pair_min <= self.pair_max) {
            return Err(Error::Parameter("pair_min must not exceed pair_max".into()));
        }
        if !(self.margin >= 0.0 && self.min_separation >= 0.0) {
            return Err(Error::Parameter("margin and min_separation must be nonnegative".into()));
        }
        if self.pool_size < 3 || self.max_attempts == 0 {
            return Err(Error::Parameter("pool_size must be at least 3 and max_attempts positive".into()));
        }
        Ok(())
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `|f_alt - f_opt| / max(|f_opt|, 1e-8)`.
pub fn relative_deviation(f_alt: f64, f_opt: f64) -> f64 {
    (f_alt - f_opt).abs() / f_opt.abs().max(REL_EPS)
}

/// Smallest value a distractor may take: `f_opt + margin·max(|f_opt|, 1e-8)`.
pub fn suboptimality_threshold(f_opt: f64, margin: f64) -> f64 {
    f_opt + margin * f_opt.abs().max(REL_EPS)
}

/// Uniform draws from the feasible set of `c` over `n` assets.
///
/// Weights are flat-Dirichlet draws mapped onto `{w >= lower}` and rejected
/// when above `upper`. With an asset count `k`, a uniformly random support
/// of size `k` is drawn first and the weights live on it. The return floor
/// is not applied here.
pub fn sample_candidates(c: &ConstraintSet, n: usize, count: usize, seed: u64) -> Result<Vec<Portfolio>> {
    c.validate(n)?;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(count);
    let cap = count.saturating_mul(1000).max(10_000);
    let mut attempts = 0;
    while out.len() < count && attempts < cap {
        attempts += 1;
        if let Some(w) = draw(c, n, &mut rng) {
            out.push(Portfolio::new(w)?);
        }
    }
    if out.len() < count {
        return Err(Error::SamplingExhausted {
            accepted: out.len(),
            attempts,
        });
    }
    Ok(out)
}

/// One rejection-sampling draw.
fn draw(c: &ConstraintSet, n: usize, rng: &mut impl Rng) -> Option<Vec<f64>> {
    let support: Vec<usize> = match c.asset_count {
        Some(k) if k < n => {
            let mut s = index::sample(rng, n, k).into_vec();
            s.sort_unstable();
            s
        }
        _ => (0..n).collect(),
    };
    let k = support.len();
    let lo = c.active_lower();
    let free = 1.0 - k as f64 * lo;
    let mut e: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    for x in e.iter_mut() {
        *x = lo + free * (*x / total);
    }
    if e.iter().any(|x| *x > c.upper) {
        return None;
    }
    let mut w = vec![0.0; n];
    for (&i, x) in support.iter().zip(e) {
        w[i] = x;
    }
    // Make the budget hold to rounding on the largest coordinate.
    let residue = 1.0 - w.iter().sum::<f64>();
    let top = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).expect("nonempty");
    w[top] += residue;
    c.admits(&w).then_some(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub portfolio: Portfolio,
    pub objective_value: f64,
    /// Euclidean distance to the optimum.
    pub distance: f64,
    /// Relative objective deviation from the optimum.
    pub deviation: f64,
}

/// Rejection counts from one generation attempt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub drawn: usize,
    pub infeasible: usize,
    pub undefined_objective: usize,
    pub not_worse: usize,
    pub outside_distance: usize,
    pub outside_deviation: usize,
    pub accepted: usize,
}

impl fmt::Display for FilterStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "drew {} candidates, accepted {}; rejected {} infeasible, {} undefined, {} within margin, \
             {} outside distance bounds, {} outside deviation bounds; no triple met the separation rules",
            self.drawn,
            self.accepted,
            self.infeasible,
            self.undefined_objective,
            self.not_worse,
            self.outside_distance,
            self.outside_deviation
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSet {
    pub distractors: [Distractor; 3],
    pub stats: FilterStats,
}

/// Three distractors for the optimum `opt`.
///
/// Every distractor is at least `spec.margin` (relative) worse than the
/// optimum, feasible unless `spec.allow_infeasible`, and at least
/// `spec.min_separation` from the other two.
pub fn generate(
    opt: &SolveReport,
    obj: &ObjectiveSpec,
    c: &ConstraintSet,
    r: &ReturnsMatrix,
    spec: &DistractorSpec,
) -> Result<DistractorSet> {
    spec.validate()?;
    let n = r.assets();
    if opt.portfolio.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: opt.portfolio.len(),
        });
    }
    let f_opt = opt.objective_value;
    let floor = suboptimality_threshold(f_opt, spec.margin);
    let violation = f_opt - (1e-6 * f_opt.abs()).max(1e-12);
    let sampling = if spec.allow_infeasible {
        ConstraintSet::default()
    } else {
        *c
    };
    sampling.validate(n)?;
    let mut rng = seed::rng(spec.seed);
    let mut stats = FilterStats::default();

    let score = |w: Vec<f64>, stats: &mut FilterStats| -> Result<Option<Distractor>> {
        stats.drawn += 1;
        if !spec.allow_infeasible && !feasible(&w, c, r) {
            stats.infeasible += 1;
            return Ok(None);
        }
        let value = match metrics::objective_value(obj, r, &w) {
            Ok(v) => v,
            Err(Error::DegenerateMetric(_)) => {
                stats.undefined_objective += 1;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        if value < violation && feasible(&w, c, r) {
            return Err(Error::OptimumViolated {
                candidate: value,
                optimum: f_opt,
            });
        }
        if value < floor {
            stats.not_worse += 1;
            return Ok(None);
        }
        let distance = euclidean_distance(&w, &opt.portfolio)?;
        let deviation = relative_deviation(value, f_opt);
        Ok(Some(Distractor {
            portfolio: Portfolio::new(w)?,
            objective_value: value,
            distance,
            deviation,
        }))
    };

    if spec.method == DistractorMethod::Quantile {
        let mut pool = Vec::with_capacity(spec.pool_size);
        let cap = spec.pool_size.saturating_mul(1000).max(10_000);
        let mut attempts = 0;
        while pool.len() < spec.pool_size && attempts < cap {
            attempts += 1;
            let Some(w) = draw(&sampling, n, &mut rng) else {
                continue;
            };
            if let Some(d) = score(w, &mut stats)? {
                pool.push(d);
            }
        }
        stats.accepted = pool.len();
        if pool.len() < 3 {
            return Err(Error::GenerationExhausted(stats));
        }
        return pick_quantiles(pool, spec, stats);
    }

    let mut accepted: Vec<Distractor> = Vec::new();
    for _ in 0..spec.max_attempts {
        let Some(w) = draw(&sampling, n, &mut rng) else {
            stats.drawn += 1;
            stats.infeasible += 1;
            continue;
        };
        let Some(d) = score(w, &mut stats)? else {
            continue;
        };
        if spec.theta.is_some_and(|t| !t.contains(d.distance)) {
            stats.outside_distance += 1;
            continue;
        }
        if spec.delta.is_some_and(|t| !t.contains(d.deviation)) {
            stats.outside_deviation += 1;
            continue;
        }
        stats.accepted += 1;
        let newest = accepted.len();
        accepted.push(d);
        if let Some([a, b]) = find_partners(&accepted, newest, spec) {
            let picked = [accepted[a].clone(), accepted[b].clone(), accepted[newest].clone()];
            return Ok(DistractorSet {
                distractors: picked,
                stats,
            });
        }
    }
    Err(Error::GenerationExhausted(stats))
}

fn pair_ok(a: &Distractor, b: &Distractor, spec: &DistractorSpec) -> bool {
    let d = euclidean_distance(&a.portfolio, &b.portfolio).expect("same length");
    if d < spec.min_separation {
        return false;
    }
    spec.method != DistractorMethod::Dual || (d >= spec.pair_min && d <= spec.pair_max)
}

/// Two earlier accepted candidates forming a valid triple with `newest`,
/// preferring the earliest pair.
fn find_partners(accepted: &[Distractor], newest: usize, spec: &DistractorSpec) -> Option<[usize; 2]> {
    let last = &accepted[newest];
    let compatible: Vec<usize> = (0..newest).filter(|&i| pair_ok(&accepted[i], last, spec)).collect();
    compatible
        .iter()
        .tuple_combinations()
        .find(|(&a, &b)| pair_ok(&accepted[a], &accepted[b], spec))
        .map(|(&a, &b)| [a, b])
}

/// Sorts the pool by objective value and takes the candidates nearest each
/// quantile rank, moving outward when a candidate is too close to one
/// already chosen.
fn pick_quantiles(mut pool: Vec<Distractor>, spec: &DistractorSpec, stats: FilterStats) -> Result<DistractorSet> {
    pool.sort_by(|a, b| a.objective_value.total_cmp(&b.objective_value));
    let last = pool.len() - 1;
    let mut chosen: Vec<usize> = Vec::with_capacity(3);
    for q in spec.quantiles {
        let target = (q * last as f64).round() as usize;
        let pick = (0..=last).find_map(|off| {
            [target.checked_sub(off), target.checked_add(off).filter(|i| *i <= last)]
                .into_iter()
                .flatten()
                .find(|&i| !chosen.contains(&i) && chosen.iter().all(|&j| pair_ok(&pool[i], &pool[j], spec)))
        });
        match pick {
            Some(i) => chosen.push(i),
            None => return Err(Error::GenerationExhausted(stats)),
        }
    }
    let distractors = [pool[chosen[0]].clone(), pool[chosen[1]].clone(), pool[chosen[2]].clone()];
    Ok(DistractorSet { distractors, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interval_parsing_and_membership() {
        let a: Interval = "[0, 0.25]".parse().unwrap();
        let b: Interval = "(0.25, 0.5]".parse().unwrap();
        assert!(a.contains(0.0) && a.contains(0.25) && !a.contains(0.2500001));
        assert!(!b.contains(0.25) && b.contains(0.5));
        assert_eq!(b.to_string(), "(0.25, 0.5]");
        assert!("[0.3, 0.1]".parse::<Interval>().is_err());
        assert!("0, 1".parse::<Interval>().is_err());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "\"[0, 0.25]\"");
    }

    #[test]
    fn distances_and_deviations() {
        assert_eq!(euclidean_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(euclidean_distance(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 2f64.sqrt());
        assert_abs_diff_eq!(euclidean_distance(&[0.5, 0.5], &[0.6, 0.4]).unwrap(), 0.02f64.sqrt(), epsilon = 1e-15);
        assert!(euclidean_distance(&[1.0], &[0.5, 0.5]).is_err());
        assert_eq!(relative_deviation(0.3, 0.3), 0.0);
        assert_abs_diff_eq!(relative_deviation(0.05, 0.04), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(relative_deviation(1e-9, 0.0), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn two_asset_samples_lie_on_segment() {
        let s = sample_candidates(&ConstraintSet::default(), 2, 100, 3).unwrap();
        for p in s {
            assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
    }

    #[test]
    fn samples_respect_lower_bound() {
        let c = ConstraintSet::with_lower(0.2);
        for p in sample_candidates(&c, 3, 500, 9).unwrap() {
            assert!(p.iter().all(|w| *w >= 0.2 - 1e-12));
        }
    }

    #[test]
    fn uniform_samples_have_symmetric_mean() {
        let s = sample_candidates(&ConstraintSet::default(), 3, 10_000, 21).unwrap();
        for i in 0..3 {
            let m = s.iter().map(|p| p[i]).sum::<f64>() / s.len() as f64;
            assert!((m - 1.0 / 3.0).abs() < 0.01, "coordinate {i} mean {m}");
        }
    }

    #[test]
    fn cardinality_samples_hold_k_assets() {
        let c = ConstraintSet::with_asset_count(2);
        for p in sample_candidates(&c, 4, 200, 5).unwrap() {
            assert_eq!(p.iter().filter(|w| **w >= 0.01).count(), 2);
            assert_eq!(p.iter().filter(|w| **w == 0.0).count(), 2);
        }
    }

    #[test]
    fn unreachable_region_exhausts_sampling() {
        // The affine map puts almost all mass above the cap.
        let c = ConstraintSet {
            lower: 0.0,
            upper: 0.1001,
            ..ConstraintSet::default()
        };
        assert!(matches!(
            sample_candidates(&c, 10, 20, 1),
            Err(Error::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(DistractorSpec::distance(Interval::closed(0.0, 0.25)).validate().is_ok());
        assert!(DistractorSpec::distance(Interval::closed(0.0, 1.5)).validate().is_err());
        let mut q = DistractorSpec::quantile();
        q.quantiles = [0.5, 0.5, 0.75];
        assert!(q.validate().is_err());
        let d = DistractorSpec {
            method: DistractorMethod::Dual,
            theta: Some(Interval::closed(0.2, 0.8)),
            ..DistractorSpec::default()
        };
        assert!(d.validate().is_err());
    }
}
