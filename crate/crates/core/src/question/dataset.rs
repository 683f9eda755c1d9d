//! Dataset configuration and generation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble_question, AssemblyContext};
use super::instance::{write_questions, ConstraintCategory, QuestionInstance};
use crate::distractor::{self, DistractorMethod, DistractorSpec, Interval};
use crate::error::{Error, Result};
use crate::eval::EvalSettings;
use crate::market_data::{compute_returns, load_prices_file, CsvLayout, CsvSchema, PriceTable};
use crate::metrics::{ObjectiveKind, ObjectiveSpec, DEFAULT_BETA};
use crate::optimizer::{solve, ConstraintSet, SolveOptions, DEFAULT_MIN_ACTIVE_WEIGHT};
use crate::seed::{self, derive_seed};

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Distractor settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorDefaults {
    pub margin: f64,
    pub min_separation: f64,
    pub pool_size: usize,
    pub max_attempts: usize,
    pub pair_min: f64,
    pub pair_max: f64,
    pub quantiles: [f64; 3],
    pub dual_theta: Interval,
    pub dual_delta: Interval,
    pub allow_infeasible: bool,
}

impl Default for DistractorDefaults {
    fn default() -> Self {
        let spec = DistractorSpec::default();
        Self {
            margin: spec.margin,
            min_separation: spec.min_separation,
            pool_size: spec.pool_size,
            max_attempts: spec.max_attempts,
            pair_min: spec.pair_min,
            pair_max: spec.pair_max,
            quantiles: spec.quantiles,
            dual_theta: Interval::closed(0.25, 1.0),
            dual_delta: Interval::closed(0.0, 0.75),
            allow_infeasible: false,
        }
    }
}

/// One group of questions, generated for every configured objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub category: ConstraintCategory,
    /// Bound level for lower/upper cells, asset count for asset cells.
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default = "default_method")]
    pub method: DistractorMethod,
    /// Distance bin (distance method) or deviation bin (threshold method).
    #[serde(default)]
    pub bin: Option<Interval>,
    /// Overrides of the dual-method bounds.
    #[serde(default)]
    pub theta: Option<Interval>,
    #[serde(default)]
    pub delta: Option<Interval>,
    pub count: usize,
    /// Number of listed assets; asset cells default to their asset count.
    #[serde(default)]
    pub universe_size: Option<usize>,
}

fn default_method() -> DistractorMethod {
    DistractorMethod::Quantile
}

impl CellSpec {
    pub fn constraints(&self) -> Result<ConstraintSet> {
        let level = || {
            self.level
                .ok_or_else(|| Error::Config(format!("{} cell needs a level", self.category)))
        };
        Ok(match self.category {
            ConstraintCategory::None => ConstraintSet::default(),
            ConstraintCategory::Lower => ConstraintSet::with_lower(level()?),
            ConstraintCategory::Upper => ConstraintSet::with_upper(level()?),
            ConstraintCategory::Asset => {
                let k = level()?;
                if k.fract() != 0.0 || k < 1.0 {
                    return Err(Error::Config(format!("asset count {k} is not a positive integer")));
                }
                ConstraintSet {
                    asset_count: Some(k as usize),
                    min_active_weight: DEFAULT_MIN_ACTIVE_WEIGHT,
                    ..ConstraintSet::default()
                }
            }
        })
    }

    pub fn universe(&self, default: usize) -> usize {
        match (self.universe_size, self.category, self.level) {
            (Some(n), _, _) => n,
            (None, ConstraintCategory::Asset, Some(k)) => k as usize,
            _ => default,
        }
    }

    pub fn distractor_spec(&self, d: &DistractorDefaults) -> Result<DistractorSpec> {
        let mut spec = DistractorSpec {
            method: self.method,
            theta: None,
            delta: None,
            quantiles: d.quantiles,
            pair_min: d.pair_min,
            pair_max: d.pair_max,
            margin: d.margin,
            min_separation: d.min_separation,
            pool_size: d.pool_size,
            max_attempts: d.max_attempts,
            allow_infeasible: d.allow_infeasible,
            seed: 0,
        };
        let need_bin = || {
            self.bin
                .ok_or_else(|| Error::Config(format!("{} cell needs a bin", self.method)))
        };
        match self.method {
            DistractorMethod::Distance => spec.theta = Some(need_bin()?),
            DistractorMethod::Threshold => spec.delta = Some(need_bin()?),
            DistractorMethod::Quantile => {}
            DistractorMethod::Dual => {
                spec.theta = Some(self.theta.unwrap_or(d.dual_theta));
                spec.delta = Some(self.delta.unwrap_or(d.dual_delta));
            }
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        let mut s = self.category.key().to_string();
        if let Some(l) = self.level {
            s.push_str(&format!(" {l}"));
        }
        s.push_str(&format!(" {}", self.method));
        if let Some(b) = self.bin {
            s.push_str(&format!(" {b}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Price file; relative paths are resolved against the config file.
    pub prices: PathBuf,
    #[serde(default)]
    pub price_layout: CsvLayout,
    /// Output directory; relative paths are resolved against the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Asset pool that universes are drawn from.
    pub tickers: Vec<String>,
    pub windows: Vec<Window>,
    #[serde(default = "default_universe")]
    pub universe_size: usize,
    pub objectives: Vec<ObjectiveKind>,
    #[serde(default)]
    pub rf: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Oracle grid step used to certify solves; `None` disables it.
    #[serde(default)]
    pub verify_step: Option<f64>,
    /// Largest universe that is certified by the oracle.
    #[serde(default = "default_verify_assets")]
    pub verify_max_assets: usize,
    /// Regenerate questions whose max-Sharpe problem has no positive excess return.
    #[serde(default = "yes")]
    pub skip_degenerate: bool,
    #[serde(default)]
    pub distractor: DistractorDefaults,
    /// Free-form notes copied into the manifest.
    #[serde(default)]
    pub notes: Vec<String>,
    pub cells: Vec<CellSpec>,
    /// Evaluation run parameters; not part of the dataset fingerprint.
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_universe() -> usize {
    3
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_retries() -> u32 {
    100
}
fn default_verify_assets() -> usize {
    4
}
fn yes() -> bool {
    true
}

impl DatasetConfig {
    /// Reads a TOML config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.prices.is_relative() {
            cfg.prices = base.join(&cfg.prices);
        }
        if let Some(out) = &cfg.output {
            if out.is_relative() {
                cfg.output = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DatasetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the price file.
    pub fn check(&self) -> Result<()> {
        if self.tickers.is_empty() || self.windows.is_empty() || self.objectives.is_empty() || self.cells.is_empty() {
            return Err(Error::Config("tickers, windows, objectives and cells must be non-empty".into()));
        }
        for w in &self.windows {
            if w.start >= w.end {
                return Err(Error::Config(format!("window {} to {} is empty", w.start, w.end)));
            }
        }
        self.objective(ObjectiveKind::MinCvar)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for cell in &self.cells {
            let c = cell.constraints()?;
            let n = cell.universe(self.universe_size);
            if n < 2 || n > self.tickers.len() {
                return Err(Error::Config(format!(
                    "cell `{}` lists {n} assets but the pool has {}",
                    cell.label(),
                    self.tickers.len()
                )));
            }
            c.validate(n).map_err(|e| Error::Config(format!("cell `{}`: {e}", cell.label())))?;
            cell.distractor_spec(&self.distractor)?;
        }
        self.eval
            .validate()
            .map_err(|e| Error::Config(format!("[eval]: {e}")))
    }

    pub fn objective(&self, kind: ObjectiveKind) -> ObjectiveSpec {
        ObjectiveSpec {
            kind,
            rf: self.rf,
            beta: self.beta,
            mu0: None,
        }
    }

    pub fn total(&self) -> usize {
        self.objectives.len() * self.cells.iter().map(|c| c.count).sum::<usize>()
    }

    /// SHA-256 of the config with machine-specific paths reduced to file names.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.prices = file_name(&self.prices).into();
        c.output = None;
        c.eval = EvalSettings::default();
        seed::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn load_prices(&self) -> Result<PriceTable> {
        let schema = CsvSchema {
            layout: self.price_layout,
            tickers: Some(self.tickers.clone()),
            ..CsvSchema::default()
        };
        let loaded = load_prices_file(&self.prices, &schema)?;
        if loaded.dropped_rows > 0 {
            log::info!("dropped {} incomplete price rows", loaded.dropped_rows);
        }
        Ok(loaded.table)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub objective: ObjectiveKind,
    pub category: ConstraintCategory,
    pub level: Option<f64>,
    pub method: DistractorMethod,
    pub bin: Option<String>,
    pub universe_size: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub price_file: String,
    pub price_sha256: String,
    pub total: usize,
    pub cells: Vec<ManifestCell>,
    pub conventions: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub questions: Vec<QuestionInstance>,
    pub manifest: Manifest,
}

impl GeneratedDataset {
    /// Writes `questions.jsonl` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let qpath = dir.join(QUESTIONS_FILE);
        let file = fs::File::create(&qpath).map_err(|e| Error::file(&qpath, e))?;
        write_questions(&self.questions, std::io::BufWriter::new(file))?;
        let mpath = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&mpath, text).map_err(|e| Error::file(&mpath, e))?;
        Ok(())
    }
}

fn conventions(cfg: &DatasetConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("returns", "simple daily returns of adjusted close prices".into());
    put("covariance", "sample covariance, T-1 denominator".into());
    put(
        "volatility_objective",
        "ranked by portfolio variance; relative deviations use variance".into(),
    );
    put("max_drawdown", "relative to the running peak of compounded wealth".into());
    put("cvar", format!("discrete CVaR of equally weighted losses at beta = {}", cfg.beta));
    put("risk_free_rate", format!("{} per period", cfg.rf));
    put(
        "objective_orientation",
        "canonical lower-is-better: variance, -mean, -Sharpe, MDD, CVaR".into(),
    );
    put("display", "weights rounded half-to-even to 3 decimals".into());
    put(
        "suboptimality",
        format!(
            "raw distractors worse by at least {} x max(|f_opt|, 1e-8); displayed answer better by at least 0.001 x max(|f|, 1e-8)",
            cfg.distractor.margin
        ),
    );
    put(
        "quantile_method",
        "reconstruction: suboptimal feasible candidates sorted by objective, picks nearest the configured rank quantiles".into(),
    );
    put(
        "asset_count",
        "exactly k assets at weight >= 0.01 with all others at zero; the listed universe has k assets unless a cell overrides it".into(),
    );
    put(
        "max_sharpe_degenerate",
        if cfg.skip_degenerate {
            "questions with no positive excess return are regenerated".into()
        } else {
            "questions with no positive excess return are kept".into()
        },
    );
    m
}

struct Job {
    objective: usize,
    cell: usize,
    index: usize,
}

/// Generates every configured question. Output order is objective, then
/// cell, then question index, independent of scheduling.
pub fn generate_dataset(cfg: &DatasetConfig, prices: &PriceTable, price_sha256: &str) -> Result<GeneratedDataset> {
    cfg.check()?;
    for t in &cfg.tickers {
        if prices.ticker_index(t).is_none() {
            return Err(Error::Config(format!("ticker `{t}` is not in the price file")));
        }
    }
    for w in &cfg.windows {
        compute_returns(prices, w.start, w.end, &cfg.tickers[..1])?;
    }
    let specs: Vec<DistractorSpec> = cfg
        .cells
        .iter()
        .map(|c| c.distractor_spec(&cfg.distractor))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::with_capacity(cfg.total());
    for o in 0..cfg.objectives.len() {
        for (c, cell) in cfg.cells.iter().enumerate() {
            for index in 0..cell.count {
                jobs.push(Job {
                    objective: o,
                    cell: c,
                    index,
                });
            }
        }
    }

    let results: Vec<Result<QuestionInstance>> = jobs
        .par_iter()
        .map(|job| build_question(cfg, prices, job, &specs[job.cell]))
        .collect();

    let mut questions = Vec::with_capacity(results.len());
    let mut failures: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(q) => questions.push(q),
            Err(e) => {
                let key = format!("{} / {}", cfg.objectives[job.objective], cfg.cells[job.cell].label());
                let entry = failures.entry(key).or_insert((0, String::new()));
                entry.0 += 1;
                entry.1 = e.to_string();
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::PartialFailure(
            failures
                .into_iter()
                .map(|(k, (n, e))| format!("{k}: {n} question(s) failed, last error: {e}"))
                .collect(),
        ));
    }

    let cells = cfg
        .objectives
        .iter()
        .flat_map(|&objective| {
            cfg.cells.iter().map(move |c| ManifestCell {
                objective,
                category: c.category,
                level: c.level,
                method: c.method,
                bin: c.bin.map(|b| b.to_string()),
                universe_size: c.universe(cfg.universe_size),
                count: c.count,
            })
        })
        .collect();
    let manifest = Manifest {
        generator: "allocbench".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_sha256: cfg.fingerprint(),
        price_file: file_name(&cfg.prices),
        price_sha256: price_sha256.into(),
        total: questions.len(),
        cells,
        conventions: conventions(cfg),
        notes: cfg.notes.clone(),
    };
    Ok(GeneratedDataset { questions, manifest })
}

/// Loads prices, generates, and hashes the price file.
pub fn generate_from_config(cfg: &DatasetConfig) -> Result<GeneratedDataset> {
    let bytes = fs::read(&cfg.prices).map_err(|e| Error::file(&cfg.prices, e))?;
    let prices = cfg.load_prices()?;
    generate_dataset(cfg, &prices, &seed::sha256_hex(&bytes))
}

fn is_retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::GenerationExhausted(_)
            | Error::Assembly(_)
            | Error::SamplingExhausted { .. }
            | Error::DegenerateObjective(_)
            | Error::Infeasible(_)
            | Error::InsufficientData(_)
            | Error::VerificationFailed { .. }
            | Error::OptimumViolated { .. }
    )
}

fn build_question(cfg: &DatasetConfig, prices: &PriceTable, job: &Job, spec: &DistractorSpec) -> Result<QuestionInstance> {
    let cell = &cfg.cells[job.cell];
    let kind = cfg.objectives[job.objective];
    let obj = cfg.objective(kind);
    let c = cell.constraints()?;
    let n = cell.universe(cfg.universe_size);
    let key = [job.objective as u64, job.cell as u64, job.index as u64];
    let id = format!("q{:016x}", derive_seed(cfg.seed, &key));
    let opts = SolveOptions {
        verify_step: cfg.verify_step.filter(|_| n <= cfg.verify_max_assets),
        ..SolveOptions::default()
    };

    let mut last = None;
    for attempt in 0..cfg.max_retries.max(1) {
        let s = |purpose: u64| derive_seed(cfg.seed, &[key[0], key[1], key[2], attempt as u64, purpose]);
        let mut rng = seed::rng(s(0));
        let mut picks = index::sample(&mut rng, cfg.tickers.len(), n).into_vec();
        picks.sort_unstable();
        let mut tickers: Vec<&str> = picks.iter().map(|&i| cfg.tickers[i].as_str()).collect();
        tickers.sort_unstable();
        let window = &cfg.windows[rng.random_range(0..cfg.windows.len())];

        let outcome = (|| -> Result<QuestionInstance> {
            let r = compute_returns(prices, window.start, window.end, &tickers)?;
            let opt = solve(&obj, &c, &r, &opts)?;
            if opt.degenerate && cfg.skip_degenerate {
                return Err(Error::DegenerateObjective("no feasible positive excess return".into()));
            }
            let mut spec = spec.clone();
            spec.seed = s(1);
            let set = distractor::generate(&opt, &obj, &c, &r, &spec)?;
            let ctx = AssemblyContext {
                id: id.clone(),
                objective: obj,
                constraints: c,
                returns: &r,
                start: window.start,
                end: window.end,
                category: cell.category,
                level: cell.level,
                spec: &spec,
                shuffle_seed: s(2),
                attempt,
            };
            assemble_question(&opt, &set.distractors, &ctx)
        })();
        match outcome {
            Ok(q) => return Ok(q),
            Err(e) if is_retryable(&e) => {
                if matches!(e, Error::VerificationFailed { .. } | Error::OptimumViolated { .. }) {
                    log::warn!("{id} attempt {attempt}: {e}");
                } else {
                    log::debug!("{id} attempt {attempt}: {e}");
                }
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Assembly("no attempts made".into())))
}
