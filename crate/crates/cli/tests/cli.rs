use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_allocbench"))
        .args(args)
        .current_dir(root())
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The smoke config with two objectives and an absolute price path,
/// written into `dir`.
fn small_config(dir: &Path, extra_tickers: &[&str]) -> PathBuf {
    let text = fs::read_to_string(root().join("configs/smoke.toml")).unwrap();
    let prices = root().join("data/synthetic_prices.csv");
    let mut tickers = String::from("tickers = [\"BND\", \"EEM\", \"EFA\", \"GLD\", \"GSG\", \"IEF\", \"LQD\", \"QQQ\", \"SPY\", \"TLT\", \"VNQ\", \"VTI\"");
    for t in extra_tickers {
        tickers.push_str(&format!(", \"{t}\""));
    }
    tickers.push(']');
    let text: String = text
        .lines()
        .map(|l| {
            if l.starts_with("prices =") {
                format!("prices = {:?}", prices.display().to_string())
            } else if l.starts_with("objectives =") {
                "objectives = [\"max_return\", \"min_cvar\"]".to_string()
            } else if l.starts_with("tickers =") {
                tickers.clone()
            } else if l.starts_with("output =") {
                String::new()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

/// A 38-question dataset shared by the read-only tests.
fn dataset() -> &'static (TempDir, PathBuf, PathBuf) {
    static DATA: OnceLock<(TempDir, PathBuf, PathBuf)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), &[]);
        let out = dir.path().join("ds");
        let o = run(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        (dir, cfg, out)
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_reports_its_size() {
    let (_, _, out) = dataset();
    let text = fs::read_to_string(out.join("questions.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 38);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn generate_with_the_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["generate", "--config", s(&cfg), "--seed", "42", "--count", "1", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("wrote 38 questions"));
    }
    for f in ["questions.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
}

#[test]
fn unknown_ticker_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &["ZZZZ"]);
    let o = run(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ZZZZ"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn validate_passes_a_fresh_dataset() {
    let (_, cfg, out) = dataset();
    let o = run(&["validate", s(out), "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("38 of 38 questions passed"));
}

#[test]
fn validate_flags_corruption_and_empty_files() {
    let (_, cfg, out) = dataset();
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(out.join("questions.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut q: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    let k = q["answer_index"].as_u64().unwrap();
    q["answer_index"] = (k % 4 + 1).into();
    lines[3] = q.to_string();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = run(&["validate", s(&bad), "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("37 of 38 questions passed"), "{}", stdout(&o));

    lines[5] = "{not json".into();
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = run(&["validate", s(&bad), "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("36 of 38 questions passed"), "{}", stdout(&o));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = run(&["validate", s(&empty), "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn render_prints_one_prompt() {
    let (_, _, out) = dataset();
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(out.join("questions.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let id = first["id"].as_str().unwrap();
    let o = run(&["render", s(out), "--id", id]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with(&format!("# {id}\nYou are a portfolio manager.")));
    assert!(text.contains("Objective: Highest Return\n"));
    assert_eq!(text.matches("\n(").count(), 4);
    let o = run(&["render", s(out), "--id", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_and_report() {
    let (_, cfg, out) = dataset();
    let dir = tempfile::tempdir().unwrap();
    let oracle = dir.path().join("oracle.jsonl");
    let o = run(&["evaluate", s(out), "--client", "oracle", "--config", s(cfg), "--out", s(&oracle)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("oracle: 38/38 correct (100.00%)"), "{}", stdout(&o));
    assert!(dir.path().join("oracle.manifest.json").exists());

    let random = |name: &str| {
        let path = dir.path().join(name);
        let o = run(&["evaluate", s(out), "--client", "random", "--seed", "1", "--parallelism", "3", "--config", s(cfg), "--out", s(&path)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["latency_ms"] = 0.into();
                v
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(random("r1.jsonl"), random("r2.jsonl"));

    let o = run(&["report", s(out), s(&oracle), s(&dir.path().join("r1.jsonl")), "--by", "objective"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Accuracy by objective\nObjective   oracle (%)  random (%)\nMax return      100.00"), "{text}");
    let max_return = text.find("Max return").unwrap();
    assert!(text[max_return..].contains("\nMin CVaR"));

    let csv_path = dir.path().join("all.csv");
    let o = run(&["report", s(out), s(&oracle), "--by", "all", "--format", "csv", "--out", s(&csv_path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("dimension,model,key1,key2,key3,correct,total,unparseable,accuracy_pct\noverall,oracle,,,,38,38,0,100.00\n"));
    for dim in ["objective", "constraint", "distractor", "lower", "upper"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{dim},"))), "{dim}");
    }

    let o = run(&["report", s(out), s(&oracle), "--by", "model"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_defaults_to_a_runs_directory() {
    let (_, cfg, out) = dataset();
    let o = run(&["evaluate", s(out), "--client", "constant:2", "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = out.join("runs/constant-2.jsonl");
    assert_eq!(fs::read_to_string(records).unwrap().lines().count(), 38);
}

#[test]
fn missing_credentials_exit_3() {
    let (_, cfg, out) = dataset();
    let o = run(&["evaluate", s(out), "--client", "openai:gpt-test", "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("OPENAI_API_KEY"));
}

#[test]
fn usage_and_environment_errors() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["generate", "--seed", "abc"]).status.code(), Some(2));
    let o = run(&["generate", "--config", "/nonexistent/config.toml", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(3));
    let (_, cfg, out) = dataset();
    let o = run(&["evaluate", s(out), "--client", "constant:9", "--config", s(cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_prices_matches_the_shipped_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let o = run(&["synth-prices", "--out", s(&path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(&path).unwrap(), fs::read(root().join("data/synthetic_prices.csv")).unwrap());
}
