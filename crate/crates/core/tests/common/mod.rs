#![allow(dead_code)]

use std::collections::HashMap;

use allocbench::distractor::{euclidean_distance, relative_deviation, Distractor, DistractorSpec};
use allocbench::eval::ReplayClient;
use allocbench::market_data::{business_days, synth_returns, ReturnsMatrix};
use allocbench::metrics::{self, ObjectiveKind, ObjectiveSpec, Portfolio};
use allocbench::optimizer::{ConstraintSet, SolveMethod, SolveReport};
use allocbench::question::{assemble_question, AssemblyContext, ConstraintCategory, QuestionInstance};
use allocbench::seed;
use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::Rng;

/// A random Gaussian market with daily-scale moments: means in
/// [-0.0003, 0.001], volatilities around 1% and random correlation.
pub fn random_market(n: usize, periods: usize, instance: u64) -> ReturnsMatrix {
    let mut rng = seed::rng(seed::derive_seed(0x5eed, &[n as u64, periods as u64, instance]));
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-0.0003..0.001)).collect();
    let factors = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.012..0.012));
    let idio = DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(0.003..0.012f64).powi(2) } else { 0.0 });
    let cov = &factors * factors.transpose() / n as f64 + idio;
    let cov = (&cov + cov.transpose()) * 0.5;
    synth_returns(n, periods, rng.random(), &mean, &cov).expect("valid market")
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-8)
}

/// Four periods whose sample covariance is exactly diag(v1, v2): the
/// deviation patterns (1,-1,1,-1) and (1,1,-1,-1) are orthogonal and each
/// has sample variance 4/3.
pub fn diagonal_market(means: [f64; 2], vars: [f64; 2]) -> ReturnsMatrix {
    let s1 = (vars[0] * 0.75).sqrt();
    let s2 = (vars[1] * 0.75).sqrt();
    let p1 = [1.0, -1.0, 1.0, -1.0];
    let p2 = [1.0, 1.0, -1.0, -1.0];
    let rows: Vec<Vec<f64>> = (0..4).map(|t| vec![means[0] + s1 * p1[t], means[1] + s2 * p2[t]]).collect();
    ReturnsMatrix::from_rows(&rows).unwrap()
}

/// The worked example question, rendered.
pub const EXAMPLE_PROMPT: &str = "You are a portfolio manager. Your task is to select the optimal portfolio based on \
portfolio theory. Make your decision using asset returns during the specified investment period and the \
information below.

Objective: Lowest Volatility
Assets: [BND, GSG, VTI]
Date: 2020-01-01 to 2024-12-31

Choices:
(1) {BND: 0.417, GSG: 0.031, VTI: 0.551}
(2) {BND: 0.026, GSG: 0.205, VTI: 0.769}
(3) {BND: 0.209, GSG: 0.686, VTI: 0.105}
(4) {BND: 0.892, GSG: 0.016, VTI: 0.093}";

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Three uncorrelated zero-mean assets with variances 1e-4, 2e-3 and 1e-3:
/// the bond-heavy portfolio is the least volatile choice by a wide margin.
pub fn example_market() -> ReturnsMatrix {
    let vars = [1e-4, 2e-3, 1e-3];
    let patterns = [[1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
    let mut data = Vec::new();
    for t in 0..4 {
        for i in 0..3 {
            data.push((vars[i] * 0.75f64).sqrt() * patterns[i][t]);
        }
    }
    let tickers = ["BND", "GSG", "VTI"].map(String::from).to_vec();
    ReturnsMatrix::new(tickers, business_days(date("2020-01-01"), 4), data).unwrap()
}

/// Raw weights that round to the example's displayed choices, answer first.
pub const RAW: [[f64; 3]; 4] = [
    [0.8917, 0.0156, 0.0927],
    [0.4174, 0.0312, 0.5514],
    [0.026, 0.205, 0.769],
    [0.209, 0.686, 0.105],
];

pub fn example_parts(r: &ReturnsMatrix) -> (SolveReport, [Distractor; 3]) {
    let obj = ObjectiveSpec::new(ObjectiveKind::MinVariance);
    let opt_w = Portfolio::new(RAW[0].to_vec()).unwrap();
    let f_opt = metrics::objective_value(&obj, r, &opt_w).unwrap();
    let d = |w: [f64; 3]| {
        let p = Portfolio::new(w.to_vec()).unwrap();
        let v = metrics::objective_value(&obj, r, &p).unwrap();
        Distractor {
            distance: euclidean_distance(&p, &opt_w).unwrap(),
            deviation: relative_deviation(v, f_opt),
            objective_value: v,
            portfolio: p,
        }
    };
    let opt = SolveReport {
        portfolio: opt_w.clone(),
        objective_value: f_opt,
        method: SolveMethod::ActiveSet,
        iterations: 0,
        verified: false,
        degenerate: false,
    };
    (opt, [d(RAW[1]), d(RAW[2]), d(RAW[3])])
}

pub fn example_context<'a>(r: &'a ReturnsMatrix, spec: &'a DistractorSpec, shuffle_seed: u64) -> AssemblyContext<'a> {
    AssemblyContext {
        id: "example".into(),
        objective: ObjectiveSpec::new(ObjectiveKind::MinVariance),
        constraints: ConstraintSet::default(),
        returns: r,
        start: date("2020-01-01"),
        end: date("2024-12-31"),
        category: ConstraintCategory::None,
        level: None,
        spec,
        shuffle_seed,
        attempt: 0,
    }
}

/// The first shuffle seed that puts the distractors in their listed order
/// and the answer last.
pub fn example_question() -> QuestionInstance {
    let r = example_market();
    let (opt, ds) = example_parts(&r);
    let spec = DistractorSpec::quantile();
    (0..10_000u64)
        .map(|s| assemble_question(&opt, &ds, &example_context(&r, &spec, s)).unwrap())
        .find(|q| (0..3).all(|i| q.metadata.choices[i].raw_weights == RAW[i + 1]))
        .expect("some seed gives the listed order")
}

/// Questions per constraint category for each objective.
pub const A2_TOTALS: [usize; 4] = [900, 300, 400, 300];

/// Correct answers of three scripted models, by objective (in
/// `ObjectiveKind::ALL` order) and constraint category (none, lower, upper,
/// asset).
pub const A2_CORRECT: [[[usize; 4]; 5]; 3] = [
    [[824, 297, 397, 225], [732, 213, 231, 124], [94, 34, 27, 44], [590, 257, 351, 202], [463, 85, 158, 106]],
    [[727, 174, 265, 124], [863, 243, 315, 85], [124, 15, 34, 8], [531, 228, 225, 84], [517, 91, 110, 36]],
    [[463, 218, 172, 36], [347, 122, 42, 30], [9, 4, 3, 7], [405, 133, 179, 60], [262, 28, 13, 12]],
];

pub const A2_MODELS: [&str; 3] = ["alpha", "beta", "gamma"];

/// 9,500 copies of the example question, relabeled into the default
/// composition, and one replay client per scripted model. Within each cell
/// the first `correct` questions are answered right; every fifth wrong reply
/// is unparseable and the others name a wrong choice.
pub fn a2_fixture() -> (Vec<QuestionInstance>, Vec<ReplayClient>) {
    let template = example_question();
    let mut questions = Vec::with_capacity(9500);
    let mut replies: Vec<HashMap<String, String>> = vec![HashMap::new(); 3];
    for (o, kind) in ObjectiveKind::ALL.into_iter().enumerate() {
        for (c, category) in ConstraintCategory::ALL.into_iter().enumerate() {
            for i in 0..A2_TOTALS[c] {
                let mut q = template.clone();
                q.id = format!("a2-{o}-{c}-{i:03}");
                q.objective = ObjectiveSpec::new(kind);
                q.metadata.category = category;
                q.answer_index = (i % 4) as u8 + 1;
                for (m, map) in replies.iter_mut().enumerate() {
                    let correct = A2_CORRECT[m][o][c];
                    let reply = if i < correct {
                        format!("({})", q.answer_index)
                    } else if (i - correct) % 5 == 0 {
                        "Unable to choose.".to_string()
                    } else {
                        format!("The answer is ({}).", q.answer_index % 4 + 1)
                    };
                    map.insert(q.id.clone(), reply);
                }
                questions.push(q);
            }
        }
    }
    let clients = replies
        .into_iter()
        .zip(A2_MODELS)
        .map(|(map, name)| ReplayClient::new(name, map))
        .collect();
    (questions, clients)
}

/// The objective-by-constraint table the fixture must render to.
pub const A2_TABLE: &str = "\
Accuracy by objective and constraint category
Objective         Constraint     alpha (%)  beta (%)  gamma (%)
Min variance      No Constraint      91.56     80.78      51.44
                  Lower Bound        99.00     58.00      72.67
                  Upper Bound        99.25     66.25      43.00
                  Asset              75.00     41.33      12.00
Max return        No Constraint      81.33     95.89      38.56
                  Lower Bound        71.00     81.00      40.67
                  Upper Bound        57.75     78.75      10.50
                  Asset              41.33     28.33      10.00
Max Sharpe ratio  No Constraint      10.44     13.78       1.00
                  Lower Bound        11.33      5.00       1.33
                  Upper Bound         6.75      8.50       0.75
                  Asset              14.67      2.67       2.33
Min MDD           No Constraint      65.56     59.00      45.00
                  Lower Bound        85.67     76.00      44.33
                  Upper Bound        87.75     56.25      44.75
                  Asset              67.33     28.00      20.00
Min CVaR          No Constraint      51.44     57.44      29.11
                  Lower Bound        28.33     30.33       9.33
                  Upper Bound        39.50     27.50       3.25
                  Asset              35.33     12.00       4.00
";
