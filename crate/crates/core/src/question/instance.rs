use std::fmt;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::distractor::{DistractorMethod, Interval};
use crate::error::{Error, Result};
use crate::metrics::{ObjectiveKind, ObjectiveSpec};
use crate::optimizer::{ConstraintSet, SolveMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintCategory {
    None,
    Lower,
    Upper,
    Asset,
}

impl ConstraintCategory {
    pub const ALL: [ConstraintCategory; 4] = [
        ConstraintCategory::None,
        ConstraintCategory::Lower,
        ConstraintCategory::Upper,
        ConstraintCategory::Asset,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ConstraintCategory::None => "none",
            ConstraintCategory::Lower => "lower",
            ConstraintCategory::Upper => "upper",
            ConstraintCategory::Asset => "asset",
        }
    }

    pub fn report_name(self) -> &'static str {
        match self {
            ConstraintCategory::None => "No Constraint",
            ConstraintCategory::Lower => "Lower Bound",
            ConstraintCategory::Upper => "Upper Bound",
            ConstraintCategory::Asset => "Asset",
        }
    }
}

impl fmt::Display for ConstraintCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Displayed weights of one choice, keyed by ticker in display order.
pub type Choice = IndexMap<String, f64>;

/// Generation details of one choice, in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceMeta {
    /// Unrounded weights, aligned with the question's tickers.
    pub raw_weights: Vec<f64>,
    /// Objective at the raw weights.
    pub raw_objective: f64,
    /// Objective at the displayed weights scaled to sum to one.
    pub displayed_objective: f64,
    /// Distance from the raw optimum.
    pub distance: f64,
    /// Relative objective deviation from the raw optimum.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetadata {
    pub category: ConstraintCategory,
    /// Bound level, or the asset count for asset questions.
    pub level: Option<f64>,
    pub method: DistractorMethod,
    /// Distance bounds (distance and dual methods).
    pub theta: Option<Interval>,
    /// Deviation bounds (threshold and dual methods).
    pub delta: Option<Interval>,
    pub quantiles: Option<[f64; 3]>,
    pub pair_range: Option<[f64; 2]>,
    pub margin: f64,
    pub min_separation: f64,
    pub allow_infeasible: bool,
    pub choices: Vec<ChoiceMeta>,
    pub solver: SolveMethod,
    pub verified: bool,
    pub seed: u64,
    pub attempt: u32,
}

impl QuestionMetadata {
    /// Difficulty bin label used to group results.
    pub fn bin_label(&self) -> String {
        match self.method {
            DistractorMethod::Distance => self.theta.map(|t| t.to_string()).unwrap_or_default(),
            DistractorMethod::Threshold => self.delta.map(|t| t.to_string()).unwrap_or_default(),
            DistractorMethod::Quantile => self
                .quantiles
                .map(|q| format!("q {}/{}/{}", q[0], q[1], q[2]))
                .unwrap_or_default(),
            DistractorMethod::Dual => match (self.theta, self.delta) {
                (Some(t), Some(d)) => format!("{t} x {d}"),
                _ => String::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    pub objective: ObjectiveSpec,
    pub constraints: ConstraintSet,
    pub tickers: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub choices: Vec<Choice>,
    /// 1-based position of the correct choice.
    pub answer_index: u8,
    pub metadata: QuestionMetadata,
}

impl QuestionInstance {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks one serialized question.
    pub fn from_json(line: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(line)?;
        let q: QuestionInstance = serde_json::from_value(raw).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .strip_prefix("missing field `")
                .and_then(|rest| rest.split('`').next())
                .unwrap_or("question")
                .to_string();
            Error::Validation { field, message: msg }
        })?;
        q.check_shape()?;
        Ok(q)
    }

    /// Structural invariants that do not need price data.
    pub fn check_shape(&self) -> Result<()> {
        if self.choices.len() != 4 {
            return Err(Error::validation("choices", format!("expected 4 choices, found {}", self.choices.len())));
        }
        if !(1..=4).contains(&self.answer_index) {
            return Err(Error::validation("answer_index", format!("{} is not in 1..=4", self.answer_index)));
        }
        if self.metadata.choices.len() != 4 {
            return Err(Error::validation("metadata.choices", "expected 4 entries"));
        }
        for (i, (choice, meta)) in self.choices.iter().zip(&self.metadata.choices).enumerate() {
            if !choice.keys().eq(self.tickers.iter()) {
                return Err(Error::validation(format!("choices[{i}]"), "tickers differ from the question's tickers"));
            }
            if meta.raw_weights.len() != self.tickers.len() {
                return Err(Error::validation(format!("metadata.choices[{i}].raw_weights"), "length differs from tickers"));
            }
        }
        if self.start > self.end {
            return Err(Error::validation("start", "start date after end date"));
        }
        Ok(())
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.objective.kind
    }

    /// Displayed weights of choice `i` (0-based), in ticker order.
    pub fn displayed_weights(&self, i: usize) -> Vec<f64> {
        self.choices[i].values().copied().collect()
    }
}

pub fn write_questions<W: Write>(questions: &[QuestionInstance], mut out: W) -> Result<()> {
    for q in questions {
        out.write_all(q.to_json()?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads newline-delimited questions; blank lines are skipped. The
/// 1-based line number is prepended to the field of a validation error.
pub fn read_questions<R: BufRead>(input: R) -> Result<Vec<QuestionInstance>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q = QuestionInstance::from_json(&line).map_err(|e| match e {
            Error::Validation { field, message } => Error::Validation {
                field: format!("line {}: {field}", i + 1),
                message,
            },
            Error::Json(j) => Error::validation(format!("line {}", i + 1), j.to_string()),
            other => other,
        })?;
        out.push(q);
    }
    Ok(out)
}
