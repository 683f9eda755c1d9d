use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::assemble::{round_weight, DISPLAY_MARGIN, DISPLAY_SUM_TOL};
use super::instance::QuestionInstance;
use crate::distractor::{euclidean_distance, relative_deviation, suboptimality_threshold, DistractorMethod, REL_EPS};
use crate::market_data::{compute_returns, PriceTable, ReturnsMatrix};
use crate::metrics::{self, Portfolio};
use crate::optimizer::feasible;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub id: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTally {
    pub passed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<QuestionFailure>,
    /// Keyed by objective, category, level, method and bin.
    pub cells: BTreeMap<String, CellTally>,
    /// How often the answer sits at positions 1 to 4.
    pub answer_positions: [usize; 4],
}

impl ValidationReport {
    /// True when there is at least one question and all of them pass.
    pub fn all_passed(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-15
}

/// Re-checks every question against the price data: display rounding and
/// sums, distinct choices, the displayed answer being strictly best,
/// feasibility, suboptimality, and the distractor method's filters.
pub fn validate_dataset(questions: &[QuestionInstance], prices: &PriceTable) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut cache: HashMap<(Vec<String>, chrono::NaiveDate, chrono::NaiveDate), Result<ReturnsMatrix, String>> =
        HashMap::new();
    for q in questions {
        report.total += 1;
        let key = (q.tickers.clone(), q.start, q.end);
        let returns = cache
            .entry(key)
            .or_insert_with(|| compute_returns(prices, q.start, q.end, &q.tickers).map_err(|e| e.to_string()));
        let reasons = match returns {
            Ok(r) => check_question(q, r),
            Err(e) => vec![format!("cannot compute returns: {e}")],
        };
        let cell_key = format!(
            "{} | {} | {} | {} | {}",
            q.objective.kind,
            q.metadata.category,
            q.metadata.level.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            q.metadata.method,
            q.metadata.bin_label()
        );
        let tally = report.cells.entry(cell_key).or_default();
        tally.total += 1;
        if (1..=4).contains(&q.answer_index) {
            report.answer_positions[q.answer_index as usize - 1] += 1;
        }
        if reasons.is_empty() {
            report.passed += 1;
            tally.passed += 1;
        } else {
            report.failures.push(QuestionFailure {
                id: q.id.clone(),
                reasons,
            });
        }
    }
    report
}

fn check_question(q: &QuestionInstance, r: &ReturnsMatrix) -> Vec<String> {
    let mut bad = Vec::new();
    if let Err(e) = q.check_shape() {
        bad.push(e.to_string());
        return bad;
    }
    let obj = &q.objective;
    let answer = q.answer_index as usize - 1;
    let meta = &q.metadata;

    let shown: Vec<Vec<f64>> = (0..4).map(|i| q.displayed_weights(i)).collect();
    let mut shown_values = Vec::with_capacity(4);
    for (i, w) in shown.iter().enumerate() {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > DISPLAY_SUM_TOL + 1e-12 {
            bad.push(format!("choice {} sums to {sum:.4}", i + 1));
        }
        let rounded: Vec<f64> = meta.choices[i].raw_weights.iter().map(|x| round_weight(*x)).collect();
        if &rounded != w {
            bad.push(format!("choice {} does not match its rounded raw weights", i + 1));
        }
        let value = Portfolio::normalized(w).and_then(|p| metrics::objective_value(obj, r, &p));
        match value {
            Ok(v) => {
                if !rel_close(v, meta.choices[i].displayed_objective, 1e-9) {
                    bad.push(format!("choice {} displayed objective differs from the stored value", i + 1));
                }
                shown_values.push(v);
            }
            Err(e) => {
                bad.push(format!("choice {}: {e}", i + 1));
                shown_values.push(f64::NAN);
            }
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if shown[i] == shown[j] {
                bad.push(format!("choices {} and {} are identical", i + 1, j + 1));
            }
        }
    }
    let best = shown_values[answer];
    let needed = DISPLAY_MARGIN * best.abs().max(REL_EPS);
    for (i, v) in shown_values.iter().enumerate() {
        if i != answer && !(v - best >= needed) {
            bad.push(format!(
                "displayed choice {} is not clearly worse than the answer ({v:.6e} vs {best:.6e})",
                i + 1
            ));
        }
    }

    let raw_opt = &meta.choices[answer];
    let f_opt = match metrics::objective_value(obj, r, &raw_opt.raw_weights) {
        Ok(v) => v,
        Err(e) => {
            bad.push(format!("optimum objective: {e}"));
            return bad;
        }
    };
    if !feasible(&raw_opt.raw_weights, &q.constraints, r) {
        bad.push("raw optimum violates the constraints".into());
    }
    let floor = suboptimality_threshold(f_opt, meta.margin);
    let distractors: Vec<usize> = (0..4).filter(|&i| i != answer).collect();
    for &i in &distractors {
        let m = &meta.choices[i];
        let Ok(value) = metrics::objective_value(obj, r, &m.raw_weights) else {
            bad.push(format!("choice {} objective undefined", i + 1));
            continue;
        };
        if !rel_close(value, m.raw_objective, 1e-9) {
            bad.push(format!("choice {} stored objective differs from recomputed", i + 1));
        }
        if value < floor {
            bad.push(format!("choice {} is not worse than the optimum by the margin", i + 1));
        }
        if !meta.allow_infeasible && !feasible(&m.raw_weights, &q.constraints, r) {
            bad.push(format!("choice {} violates the constraints", i + 1));
        }
        let distance = euclidean_distance(&m.raw_weights, &raw_opt.raw_weights).unwrap_or(f64::NAN);
        if !((distance - m.distance).abs() <= 1e-12) {
            bad.push(format!("choice {} stored distance differs from recomputed", i + 1));
        }
        let deviation = relative_deviation(value, f_opt);
        if let Some(t) = meta.theta.filter(|_| matches!(meta.method, DistractorMethod::Distance | DistractorMethod::Dual)) {
            if !t.contains(distance) {
                bad.push(format!("choice {} distance {distance:.6} outside {t}", i + 1));
            }
        }
        if let Some(t) = meta.delta.filter(|_| matches!(meta.method, DistractorMethod::Threshold | DistractorMethod::Dual)) {
            if !t.contains(deviation) {
                bad.push(format!("choice {} deviation {deviation:.6} outside {t}", i + 1));
            }
        }
    }
    for (a, &i) in distractors.iter().enumerate() {
        for &j in &distractors[a + 1..] {
            let d = euclidean_distance(&meta.choices[i].raw_weights, &meta.choices[j].raw_weights).unwrap_or(f64::NAN);
            if !(d >= meta.min_separation) {
                bad.push(format!("choices {} and {} are only {d:.4} apart", i + 1, j + 1));
            }
            if let Some([lo, hi]) = meta.pair_range {
                if !(d >= lo && d <= hi) {
                    bad.push(format!("choices {} and {} are {d:.4} apart, outside [{lo}, {hi}]", i + 1, j + 1));
                }
            }
        }
    }
    bad
}
