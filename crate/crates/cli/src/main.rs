use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use allocbench::eval::{
    aggregate, build_client, evaluate, read_records_file, render_report, ClientContext, ClientSpec, Dimension,
    ReportFormat,
};
use allocbench::market_data::{synthetic, write_prices_csv};
use allocbench::question::{
    generate_from_config, render_prompt, validate_dataset, DatasetConfig, QuestionInstance, QUESTIONS_FILE,
};
use allocbench::Error;
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

const DEFAULT_CONFIG: &str = "configs/default.toml";

#[derive(Parser)]
#[command(name = "allocbench", version, about = "Portfolio-allocation multiple-choice benchmark toolkit")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its manifest.
    Generate {
        #[arg(long, default_value = DEFAULT_CONFIG)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Questions per cell and objective, replacing every cell's count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Re-check every question of a dataset against the price data.
    Validate {
        /// Dataset directory or questions file.
        dataset: PathBuf,
        #[command(flatten)]
        prices: PriceArgs,
    },
    /// Print question prompts.
    Render {
        dataset: PathBuf,
        /// Only the question with this id.
        #[arg(long)]
        id: Option<String>,
    },
    /// Ask a client every question and record its answers.
    Evaluate {
        dataset: PathBuf,
        /// oracle, random, constant:K, replay:PATH, openai:MODEL, gemini:MODEL or together:MODEL.
        #[arg(long)]
        client: String,
        #[command(flatten)]
        prices: PriceArgs,
        /// Records file; defaults to runs/<client>.jsonl next to the dataset.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the random client; overrides `[eval] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Accuracy tables from one or more records files.
    Report {
        dataset: PathBuf,
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Comma-separated: objective, constraint, distractor, lower, upper, or all.
        #[arg(long, default_value = "objective")]
        by: String,
        #[arg(long, default_value = "text")]
        format: String,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic price file.
    SynthPrices {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "data/synthetic_prices.csv")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PriceArgs {
    /// Config whose price file the dataset was built from.
    #[arg(long, default_value = DEFAULT_CONFIG)]
    config: PathBuf,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn failed(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
    fn usage(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Setup(_) | Error::File { .. } | Error::Io(_) => 3,
        Error::Config(_) | Error::Parameter(_) => 2,
        _ => 1,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            error: e.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn questions_file(dataset: &Path) -> PathBuf {
    if dataset.is_dir() {
        dataset.join(QUESTIONS_FILE)
    } else {
        dataset.to_path_buf()
    }
}

fn dataset_dir(dataset: &Path) -> PathBuf {
    if dataset.is_dir() {
        dataset.to_path_buf()
    } else {
        dataset.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Questions that parse, plus one message per line that does not.
fn read_dataset_lenient(dataset: &Path) -> Result<(Vec<QuestionInstance>, Vec<String>), Failure> {
    let path = questions_file(dataset);
    let text = fs::read_to_string(&path).map_err(|e| Failure::from(Error::File { path: path.clone(), source: e }))?;
    let mut questions = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match QuestionInstance::from_json(line) {
            Ok(q) => questions.push(q),
            Err(e) => bad.push(format!("line {}: {e}", i + 1)),
        }
    }
    Ok((questions, bad))
}

fn read_dataset(dataset: &Path) -> Result<Vec<QuestionInstance>, Failure> {
    let (questions, bad) = read_dataset_lenient(dataset)?;
    if let Some(first) = bad.first() {
        return Err(Failure::failed(anyhow!(
            "{} unreadable question line(s); first: {first}",
            bad.len()
        )));
    }
    Ok(questions)
}

fn cmd_generate(config: &Path, seed: Option<u64>, out: Option<PathBuf>, count: Option<usize>) -> CmdResult {
    let mut cfg = DatasetConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = count {
        for cell in &mut cfg.cells {
            cell.count = n;
        }
    }
    let out = out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::usage(anyhow!("no output directory: pass --out or set `output` in the config")))?;
    let started = Instant::now();
    log::info!("generating {} questions", cfg.total());
    let dataset = generate_from_config(&cfg)?;
    dataset.write(&out)?;
    println!(
        "wrote {} questions to {} in {:.1}s",
        dataset.questions.len(),
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_validate(dataset: &Path, config: &Path) -> CmdResult {
    let cfg = DatasetConfig::load(config)?;
    let prices = cfg.load_prices()?;
    let (questions, bad) = read_dataset_lenient(dataset)?;
    let report = validate_dataset(&questions, &prices);
    let total = report.total + bad.len();
    let failed = report.failures.len() + bad.len();
    for b in &bad {
        eprintln!("unreadable {b}");
    }
    for f in report.failures.iter().take(20) {
        eprintln!("{}: {}", f.id, f.reasons.join("; "));
    }
    let p = report.answer_positions;
    println!("answer positions: (1) {} (2) {} (3) {} (4) {}", p[0], p[1], p[2], p[3]);
    println!("{} of {total} questions passed", total - failed);
    if total == 0 {
        return Err(Failure::failed(anyhow!("{} holds no questions", questions_file(dataset).display())));
    }
    if failed > 0 {
        return Err(Failure::failed(anyhow!("{failed} of {total} questions failed validation")));
    }
    Ok(())
}

fn cmd_render(dataset: &Path, id: Option<&str>) -> CmdResult {
    let questions = read_dataset(dataset)?;
    let picked: Vec<&QuestionInstance> = match id {
        Some(id) => {
            let q = questions
                .iter()
                .find(|q| q.id == id)
                .ok_or_else(|| Failure::usage(anyhow!("no question with id {id}")))?;
            vec![q]
        }
        None => questions.iter().collect(),
    };
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for (i, q) in picked.iter().enumerate() {
        let sep = if i == 0 { "" } else { "\n" };
        writeln!(w, "{sep}# {}\n{}", q.id, render_prompt(q)).context("writing prompts").map_err(Failure::failed)?;
    }
    w.flush().context("writing prompts").map_err(Failure::failed)?;
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn cmd_evaluate(
    dataset: &Path,
    client: &str,
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    parallelism: Option<usize>,
) -> CmdResult {
    let spec: ClientSpec = client.parse()?;
    let cfg = DatasetConfig::load(config)?;
    let mut settings = cfg.eval.clone();
    if let Some(s) = seed {
        settings.seed = s;
    }
    if let Some(p) = parallelism {
        settings.parallelism = p;
    }
    settings.validate()?;
    let prices = cfg.load_prices()?;
    let questions = read_dataset(dataset)?;
    let check = validate_dataset(&questions, &prices);
    if !check.all_passed() {
        return Err(Failure::failed(anyhow!(
            "dataset does not validate ({} of {} failed); run `allocbench validate`",
            check.total - check.passed,
            check.total
        )));
    }
    let client = build_client(
        &spec,
        ClientContext {
            questions: &questions,
            prices: Some(&prices),
            seed: settings.seed,
        },
    )?;
    let out = out.unwrap_or_else(|| dataset_dir(dataset).join("runs").join(format!("{}.jsonl", file_safe(client.name()))));
    let run = evaluate(&questions, client.as_ref(), &settings, Some(&out))?;
    let m = &run.manifest;
    println!(
        "{}: {}/{} correct ({:.2}%), {} unparseable, {} failed calls, {} resumed; records in {}",
        m.client,
        m.correct,
        m.questions,
        m.accuracy_pct,
        m.unparseable,
        m.failed,
        m.resumed,
        out.display()
    );
    Ok(())
}

fn parse_dimensions(by: &str) -> Result<Vec<Dimension>, Failure> {
    if by.trim() == "all" {
        return Ok(Dimension::ALL.to_vec());
    }
    by.split(',').map(|s| s.trim().parse::<Dimension>().map_err(Failure::from)).collect()
}

fn cmd_report(dataset: &Path, records: &[PathBuf], by: &str, format: &str, out: Option<&Path>) -> CmdResult {
    let dims = parse_dimensions(by)?;
    let format: ReportFormat = format.parse()?;
    let questions = read_dataset(dataset)?;
    let mut all = Vec::new();
    for path in records {
        all.extend(read_records_file(path)?);
    }
    let report = aggregate(&all, &questions, &dims)?;
    let text = render_report(&report, format);
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::from(Error::File { path: path.into(), source: e }))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_synth_prices(seed: u64, out: &Path) -> CmdResult {
    let table = synthetic::price_table(seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::from(Error::File { path: dir.into(), source: e }))?;
    }
    let file = fs::File::create(out).map_err(|e| Failure::from(Error::File { path: out.into(), source: e }))?;
    write_prices_csv(&table, BufWriter::new(file))?;
    println!("wrote {} days x {} assets to {}", table.len(), table.tickers().len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Generate { config, seed, out, count } => cmd_generate(&config, seed, out, count),
        Command::Validate { dataset, prices } => cmd_validate(&dataset, &prices.config),
        Command::Render { dataset, id } => cmd_render(&dataset, id.as_deref()),
        Command::Evaluate {
            dataset,
            client,
            prices,
            out,
            seed,
            parallelism,
        } => cmd_evaluate(&dataset, &client, &prices.config, out, seed, parallelism),
        Command::Report {
            dataset,
            records,
            by,
            format,
            out,
        } => cmd_report(&dataset, &records, &by, &format, out.as_deref()),
        Command::SynthPrices { seed, out } => cmd_synth_prices(seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
