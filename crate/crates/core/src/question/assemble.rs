use chrono::NaiveDate;
use rand::seq::SliceRandom;

use super::instance::{Choice, ChoiceMeta, ConstraintCategory, QuestionInstance, QuestionMetadata};
use crate::distractor::{Distractor, DistractorMethod, DistractorSpec, REL_EPS};
use crate::error::{Error, Result};
use crate::market_data::ReturnsMatrix;
use crate::metrics::{self, ObjectiveSpec, Portfolio};
use crate::optimizer::{ConstraintSet, SolveReport};
use crate::seed;

/// Allowed deviation of a displayed choice's sum from one.
pub const DISPLAY_SUM_TOL: f64 = 0.002;

/// Required relative advantage of the displayed answer over every displayed
/// distractor.
pub const DISPLAY_MARGIN: f64 = 0.001;

/// Rounds half to even at three decimals.
pub fn round_weight(w: f64) -> f64 {
    (w * 1000.0).round_ties_even() / 1000.0
}

/// Everything a question needs besides the optimum and its distractors.
#[derive(Debug, Clone)]
pub struct AssemblyContext<'a> {
    pub id: String,
    pub objective: ObjectiveSpec,
    pub constraints: ConstraintSet,
    /// Returns of the question's assets; its ticker order is the display order.
    pub returns: &'a ReturnsMatrix,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub category: ConstraintCategory,
    pub level: Option<f64>,
    pub spec: &'a DistractorSpec,
    pub shuffle_seed: u64,
    pub attempt: u32,
}

/// Rounds the four choices for display, checks that the optimum is still
/// strictly best among the displayed choices, and shuffles their order.
pub fn assemble_question(
    opt: &SolveReport,
    distractors: &[Distractor; 3],
    ctx: &AssemblyContext<'_>,
) -> Result<QuestionInstance> {
    let r = ctx.returns;
    let n = r.assets();
    let raw: Vec<&Portfolio> = std::iter::once(&opt.portfolio)
        .chain(distractors.iter().map(|d| &d.portfolio))
        .collect();
    if raw.iter().any(|p| p.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: raw.iter().map(|p| p.len()).find(|&l| l != n).unwrap_or(0),
        });
    }

    let shown: Vec<Vec<f64>> = raw.iter().map(|p| p.iter().map(|w| round_weight(*w)).collect()).collect();
    let mut shown_values = Vec::with_capacity(4);
    for (i, w) in shown.iter().enumerate() {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > DISPLAY_SUM_TOL + 1e-12 {
            return Err(Error::Assembly(format!("choice {i} displays weights summing to {sum:.3}")));
        }
        let p = Portfolio::normalized(w)?;
        let value = metrics::objective_value(&ctx.objective, r, &p).map_err(|e| {
            Error::Assembly(format!("objective undefined at displayed choice {i}: {e}"))
        })?;
        shown_values.push(value);
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if shown[i] == shown[j] {
                return Err(Error::Assembly(format!("choices {i} and {j} display identical weights")));
            }
        }
    }
    let best = shown_values[0];
    let needed = DISPLAY_MARGIN * best.abs().max(REL_EPS);
    for (i, v) in shown_values.iter().enumerate().skip(1) {
        if v - best < needed {
            return Err(Error::Assembly(format!(
                "displayed distractor {i} is within the margin of the answer ({v:.6e} vs {best:.6e})"
            )));
        }
    }

    let mut order = [0usize, 1, 2, 3];
    order.shuffle(&mut seed::rng(ctx.shuffle_seed));
    let answer_index = order.iter().position(|&k| k == 0).expect("answer present") as u8 + 1;

    let tickers = r.tickers().to_vec();
    let choices: Vec<Choice> = order
        .iter()
        .map(|&k| tickers.iter().cloned().zip(shown[k].iter().copied()).collect())
        .collect();
    let meta_for = |k: usize| -> ChoiceMeta {
        if k == 0 {
            ChoiceMeta {
                raw_weights: opt.portfolio.weights().to_vec(),
                raw_objective: opt.objective_value,
                displayed_objective: shown_values[0],
                distance: 0.0,
                deviation: 0.0,
            }
        } else {
            let d = &distractors[k - 1];
            ChoiceMeta {
                raw_weights: d.portfolio.weights().to_vec(),
                raw_objective: d.objective_value,
                displayed_objective: shown_values[k],
                distance: d.distance,
                deviation: d.deviation,
            }
        }
    };

    let spec = ctx.spec;
    let metadata = QuestionMetadata {
        category: ctx.category,
        level: ctx.level,
        method: spec.method,
        theta: spec.theta,
        delta: spec.delta,
        quantiles: (spec.method == DistractorMethod::Quantile).then_some(spec.quantiles),
        pair_range: (spec.method == DistractorMethod::Dual).then_some([spec.pair_min, spec.pair_max]),
        margin: spec.margin,
        min_separation: spec.min_separation,
        allow_infeasible: spec.allow_infeasible,
        choices: order.iter().map(|&k| meta_for(k)).collect(),
        solver: opt.method,
        verified: opt.verified,
        seed: spec.seed,
        attempt: ctx.attempt,
    };

    Ok(QuestionInstance {
        id: ctx.id.clone(),
        objective: ctx.objective,
        constraints: ctx.constraints,
        tickers,
        start: ctx.start,
        end: ctx.end,
        choices,
        answer_index,
        metadata,
    })
}
