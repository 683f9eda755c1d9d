use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::EvalRecord;
use crate::distractor::DistractorMethod;
use crate::error::{Error, Result};
use crate::metrics::ObjectiveKind;
use crate::question::{ConstraintCategory, QuestionInstance};

/// Grouping of an accuracy table.
///
/// `Objective` and `Constraint` cover every question. `Distractor` covers
/// unconstrained questions only, `Lower` and `Upper` only questions of that
/// constraint category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    /// Objective.
    Objective,
    /// Objective, then constraint category.
    Constraint,
    /// Distractor method, bin, objective.
    Distractor,
    /// Lower-bound level (ascending), objective.
    Lower,
    /// Upper-bound level (descending), objective.
    Upper,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Objective,
        Dimension::Constraint,
        Dimension::Distractor,
        Dimension::Lower,
        Dimension::Upper,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Dimension::Objective => "objective",
            Dimension::Constraint => "constraint",
            Dimension::Distractor => "distractor",
            Dimension::Lower => "lower",
            Dimension::Upper => "upper",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Dimension::Objective => "Accuracy by objective",
            Dimension::Constraint => "Accuracy by objective and constraint category",
            Dimension::Distractor => "Accuracy by distractor method and bin (unconstrained questions)",
            Dimension::Lower => "Accuracy by lower-bound level",
            Dimension::Upper => "Accuracy by upper-bound level",
        }
    }

    fn key_names(self) -> &'static [&'static str] {
        match self {
            Dimension::Objective => &["Objective"],
            Dimension::Constraint => &["Objective", "Constraint"],
            Dimension::Distractor => &["Method", "Bin", "Objective"],
            Dimension::Lower | Dimension::Upper => &["Level", "Objective"],
        }
    }

    fn includes(self, q: &QuestionInstance) -> bool {
        match self {
            Dimension::Objective | Dimension::Constraint => true,
            Dimension::Distractor => q.metadata.category == ConstraintCategory::None,
            Dimension::Lower => q.metadata.category == ConstraintCategory::Lower,
            Dimension::Upper => q.metadata.category == ConstraintCategory::Upper,
        }
    }

    /// Sort key and display keys of the row `q` falls in.
    fn row(self, q: &QuestionInstance) -> (Vec<i64>, Vec<String>) {
        let md = &q.metadata;
        let obj_rank = ObjectiveKind::ALL.iter().position(|k| *k == q.kind()).unwrap_or(0) as i64;
        let obj = q.kind().report_name().to_string();
        let level = md.level.unwrap_or(0.0);
        let micro = (level * 1e6).round() as i64;
        match self {
            Dimension::Objective => (vec![obj_rank], vec![obj]),
            Dimension::Constraint => {
                let cat_rank = category_rank(md.category);
                (vec![obj_rank, cat_rank], vec![obj, md.category.report_name().to_string()])
            }
            Dimension::Distractor => {
                let m_rank = method_rank(md.method);
                let bin_lo = md.theta.or(md.delta).map(|t| (t.lo * 1e6).round() as i64).unwrap_or(0);
                let bin_second = md.delta.filter(|_| md.theta.is_some()).map(|t| (t.lo * 1e6).round() as i64).unwrap_or(0);
                (
                    vec![m_rank, bin_lo, bin_second, obj_rank],
                    vec![md.method.report_name().to_string(), md.bin_label(), obj],
                )
            }
            Dimension::Lower => (vec![micro, obj_rank], vec![format!("≥ {}%", percent(level)), obj]),
            Dimension::Upper => (vec![-micro, obj_rank], vec![format!("≤ {}%", percent(level)), obj]),
        }
    }
}

fn percent(level: f64) -> String {
    format!("{}", (level * 1e4).round() / 1e2)
}

fn category_rank(c: ConstraintCategory) -> i64 {
    match c {
        ConstraintCategory::None => 0,
        ConstraintCategory::Lower => 1,
        ConstraintCategory::Upper => 2,
        ConstraintCategory::Asset => 3,
    }
}

fn method_rank(m: DistractorMethod) -> i64 {
    match m {
        DistractorMethod::Distance => 0,
        DistractorMethod::Threshold => 1,
        DistractorMethod::Quantile => 2,
        DistractorMethod::Dual => 3,
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.key() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown report dimension `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub unparseable: usize,
}

impl Tally {
    fn add(&mut self, r: &EvalRecord) {
        self.total += 1;
        self.correct += r.correct as usize;
        self.unparseable += r.parsed.is_none() as usize;
    }

    /// Percentage correct, rounded to 2 decimals; 0 for an empty tally.
    pub fn accuracy_pct(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (1e4 * self.correct as f64 / self.total as f64).round() / 1e2
    }

    pub fn unparseable_pct(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (1e4 * self.unparseable as f64 / self.total as f64).round() / 1e2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub keys: Vec<String>,
    /// One tally per model, in [`AccuracyReport::models`] order.
    pub tallies: Vec<Tally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub dimension: Dimension,
    pub key_names: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// In order of first appearance in the records.
    pub models: Vec<String>,
    pub overall: Vec<Tally>,
    pub tables: Vec<AccuracyTable>,
}

/// Groups `records` by `dimensions`. Records may come from several models;
/// each model's records must cover `questions` exactly once.
pub fn aggregate(records: &[EvalRecord], questions: &[QuestionInstance], dimensions: &[Dimension]) -> Result<AccuracyReport> {
    let by_id: HashMap<&str, &QuestionInstance> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut models: Vec<String> = Vec::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for r in records {
        if !by_id.contains_key(r.question_id.as_str()) {
            return Err(Error::validation("question_id", format!("record for unknown question {}", r.question_id)));
        }
        if !seen.insert((r.model.as_str(), r.question_id.as_str())) {
            return Err(Error::validation(
                "question_id",
                format!("{} has two records for {}", r.model, r.question_id),
            ));
        }
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    for m in &models {
        let n = records.iter().filter(|r| &r.model == m).count();
        if n != questions.len() {
            return Err(Error::validation(
                "records",
                format!("{m} has records for {n} of {} questions", questions.len()),
            ));
        }
    }
    let model_index = |m: &str| models.iter().position(|x| x == m).expect("model listed");

    let mut overall = vec![Tally::default(); models.len()];
    for r in records {
        overall[model_index(&r.model)].add(r);
    }

    let mut tables = Vec::with_capacity(dimensions.len());
    for &dim in dimensions {
        let mut rows: BTreeMap<Vec<i64>, ReportRow> = BTreeMap::new();
        for r in records {
            let q = by_id[r.question_id.as_str()];
            if !dim.includes(q) {
                continue;
            }
            let (mut sort, keys) = dim.row(q);
            // Distinct labels that share a numeric key still get their own rows.
            sort.extend(keys.iter().flat_map(|k| k.bytes().map(i64::from).chain([-1])));
            let row = rows.entry(sort).or_insert_with(|| ReportRow {
                keys,
                tallies: vec![Tally::default(); models.len()],
            });
            row.tallies[model_index(&r.model)].add(r);
        }
        tables.push(AccuracyTable {
            dimension: dim,
            key_names: dim.key_names().iter().map(|s| s.to_string()).collect(),
            rows: rows.into_values().collect(),
        });
    }
    Ok(AccuracyReport { models, overall, tables })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    /// Long format: one line per table row and model.
    Csv,
    /// Aligned tables with one accuracy column per model.
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" | "txt" => Ok(ReportFormat::Text),
            _ => Err(Error::Parameter(format!("unknown report format `{s}`"))),
        }
    }
}

const CSV_HEADER: [&str; 9] = [
    "dimension",
    "model",
    "key1",
    "key2",
    "key3",
    "correct",
    "total",
    "unparseable",
    "accuracy_pct",
];

pub fn render_report(report: &AccuracyReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Text => render_text(report),
    }
}

fn render_csv(report: &AccuracyReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    let mut line = |dim: &str, model: &str, keys: &[String], t: &Tally| {
        let mut rec: Vec<String> = vec![dim.to_string(), model.to_string()];
        rec.extend((0..3).map(|i| keys.get(i).cloned().unwrap_or_default()));
        rec.extend([
            t.correct.to_string(),
            t.total.to_string(),
            t.unparseable.to_string(),
            format!("{:.2}", t.accuracy_pct()),
        ]);
        w.write_record(&rec).expect("in-memory write");
    };
    for (m, t) in report.models.iter().zip(&report.overall) {
        line("overall", m, &[], t);
    }
    for table in &report.tables {
        for row in &table.rows {
            for (m, t) in report.models.iter().zip(&row.tallies) {
                line(table.dimension.key(), m, &row.keys, t);
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Left-aligns the first `left` columns and right-aligns the rest.
fn aligned(rows: &[Vec<String>], left: usize) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let pad = widths[c] - cell.chars().count();
            if c < left {
                line.push_str(cell);
                line.extend(std::iter::repeat_n(' ', pad));
            } else {
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn render_text(report: &AccuracyReport) -> String {
    let mut out = String::new();
    let mut overall = vec![vec![
        "Model".to_string(),
        "Correct".into(),
        "Total".into(),
        "Accuracy (%)".into(),
        "Unparseable (%)".into(),
    ]];
    for (m, t) in report.models.iter().zip(&report.overall) {
        overall.push(vec![
            m.clone(),
            t.correct.to_string(),
            t.total.to_string(),
            format!("{:.2}", t.accuracy_pct()),
            format!("{:.2}", t.unparseable_pct()),
        ]);
    }
    out.push_str("Overall\n");
    out.push_str(&aligned(&overall, 1));

    for table in &report.tables {
        let k = table.key_names.len();
        let mut rows = vec![table
            .key_names
            .iter()
            .cloned()
            .chain(report.models.iter().map(|m| format!("{m} (%)")))
            .collect::<Vec<_>>()];
        let mut prev: Vec<String> = Vec::new();
        for row in &table.rows {
            // Blank out leading keys repeated from the row above.
            let shared = row.keys.iter().zip(&prev).take(k - 1).take_while(|(a, b)| a == b).count();
            let mut cells: Vec<String> = row
                .keys
                .iter()
                .enumerate()
                .map(|(i, s)| if i < shared { String::new() } else { s.clone() })
                .collect();
            cells.extend(row.tallies.iter().map(|t| format!("{:.2}", t.accuracy_pct())));
            rows.push(cells);
            prev = row.keys.clone();
        }
        let _ = write!(out, "\n{}\n", table.dimension.title());
        out.push_str(&aligned(&rows, k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_names() {
        for d in Dimension::ALL {
            assert_eq!(d.key().parse::<Dimension>().unwrap(), d);
        }
        assert!(matches!("model".parse::<Dimension>(), Err(Error::Parameter(_))));
    }

    #[test]
    fn tally_rounding() {
        let t = Tally {
            correct: 2,
            total: 3,
            unparseable: 1,
        };
        assert_eq!(t.accuracy_pct(), 66.67);
        assert_eq!(t.unparseable_pct(), 33.33);
        assert_eq!(Tally::default().accuracy_pct(), 0.0);
    }

    #[test]
    fn empty_report_is_headers_only() {
        let report = aggregate(&[], &[], &[Dimension::Objective]).unwrap();
        assert_eq!(render_report(&report, ReportFormat::Csv), format!("{}\n", CSV_HEADER.join(",")));
        assert_eq!(
            render_report(&report, ReportFormat::Text),
            "Overall\nModel  Correct  Total  Accuracy (%)  Unparseable (%)\n\nAccuracy by objective\nObjective\n"
        );
    }

    #[test]
    fn alignment() {
        let rows = vec![
            vec!["a".to_string(), "num".into()],
            vec!["long".to_string(), "1.00".into()],
        ];
        assert_eq!(aligned(&rows, 1), "a      num\nlong  1.00\n");
    }
}
