use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::parse::parse_answer;
use super::{ClientError, CompletionParams, ModelClient, Query};
use crate::error::{Error, Result};
use crate::question::{render_prompt, QuestionInstance};

/// Run parameters. Lives in the `[eval]` table of a dataset config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Requests in flight at once.
    pub parallelism: usize,
    /// Extra attempts after a failed call.
    pub retries: u32,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    /// Seed for clients that draw random answers.
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            parallelism: 4,
            retries: 5,
            backoff_initial_ms: 500,
            backoff_max_ms: 30_000,
            temperature: 0.0,
            max_tokens: 256,
            timeout_secs: 60.0,
            seed: 0,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::Parameter("parallelism must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Parameter(format!("timeout {} s is not positive", self.timeout_secs)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Parameter(format!("temperature {} is negative", self.temperature)));
        }
        if self.backoff_initial_ms > self.backoff_max_ms {
            return Err(Error::Parameter("initial backoff exceeds the maximum".into()));
        }
        Ok(())
    }

    pub fn completion(&self) -> CompletionParams {
        CompletionParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout: Duration::from_secs_f64(self.timeout_secs),
        }
    }

    /// Backoff before attempt `attempt + 1`, doubling from the initial delay.
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_initial_ms
            .saturating_mul(1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub model: String,
    /// `None` when every attempt failed.
    pub raw_response: Option<String>,
    /// Declared choice, 1 to 4; `None` is unparseable.
    pub parsed: Option<u8>,
    pub correct: bool,
    /// Duration of the last call.
    pub latency_ms: f64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub client: String,
    pub client_settings: serde_json::Value,
    pub settings: EvalSettings,
    pub questions: usize,
    /// Records taken over from an earlier run.
    pub resumed: usize,
    pub queried: usize,
    pub correct: usize,
    pub unparseable: usize,
    /// Records whose calls all failed.
    pub failed: usize,
    pub accuracy_pct: f64,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    /// One record per question, in dataset order.
    pub records: Vec<EvalRecord>,
    pub manifest: RunManifest,
}

/// Where the manifest for a records file goes: `run.jsonl` gives
/// `run.manifest.json`.
pub fn manifest_path(records: &Path) -> PathBuf {
    records.with_extension("manifest.json")
}

pub fn write_records<W: Write>(records: &[EvalRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Records already on disk. A torn last line from an interrupted run is
/// dropped; damage anywhere else is an error.
fn load_store(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::file(path, e)),
    };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut out = Vec::with_capacity(lines.len());
    for (k, (i, line)) in lines.iter().enumerate() {
        match serde_json::from_str::<EvalRecord>(line) {
            Ok(r) => out.push(r),
            Err(e) if k + 1 == lines.len() && !text.ends_with('\n') => {
                log::warn!("{}: dropping torn last record at line {}: {e}", path.display(), i + 1);
            }
            Err(e) => {
                return Err(Error::Parse {
                    row: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn rewrite_store(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let file = File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    write_records(records, BufWriter::new(file))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

fn ask(q: &QuestionInstance, client: &dyn ModelClient, settings: &EvalSettings, params: &CompletionParams) -> EvalRecord {
    let prompt = render_prompt(q);
    let query = Query {
        question_id: &q.id,
        prompt: &prompt,
    };
    let mut attempts = 0;
    loop {
        attempts += 1;
        let started = Instant::now();
        let outcome = client.complete(&query, params);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let error = match outcome {
            Ok(text) => {
                let parsed = parse_answer(&text);
                return EvalRecord {
                    question_id: q.id.clone(),
                    model: client.name().to_string(),
                    raw_response: Some(text),
                    parsed,
                    correct: parsed == Some(q.answer_index),
                    latency_ms,
                    attempts,
                    error: None,
                };
            }
            Err(e) => e,
        };
        let wait = match &error {
            ClientError::Fatal(_) => None,
            _ if attempts > settings.retries => None,
            ClientError::RateLimited { retry_after: Some(d) } => {
                Some((*d).clamp(settings.backoff(attempts), Duration::from_millis(settings.backoff_max_ms)))
            }
            _ => Some(settings.backoff(attempts)),
        };
        match wait {
            Some(d) => {
                log::debug!("{}: attempt {attempts} failed ({error}), retrying in {d:?}", q.id);
                thread::sleep(d);
            }
            None => {
                log::warn!("{}: giving up after {attempts} attempt(s): {error}", q.id);
                return EvalRecord {
                    question_id: q.id.clone(),
                    model: client.name().to_string(),
                    raw_response: None,
                    parsed: None,
                    correct: false,
                    latency_ms,
                    attempts,
                    error: Some(error.to_string()),
                };
            }
        }
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Sends every question to `client` and scores the replies.
///
/// With a `store`, each record is appended to that JSON-lines file as soon
/// as it exists, and records already there are reused instead of asking
/// again. On success the store is rewritten in dataset order and the run
/// manifest is written next to it.
pub fn evaluate(
    questions: &[QuestionInstance],
    client: &dyn ModelClient,
    settings: &EvalSettings,
    store: Option<&Path>,
) -> Result<EvalRun> {
    settings.validate()?;
    let started_at = now();
    let mut ids = HashSet::with_capacity(questions.len());
    for q in questions {
        if !ids.insert(q.id.as_str()) {
            return Err(Error::validation("id", format!("duplicate question id {}", q.id)));
        }
    }

    let mut done: HashMap<String, EvalRecord> = HashMap::new();
    if let Some(path) = store {
        for r in load_store(path)? {
            if r.model != client.name() {
                return Err(Error::Config(format!(
                    "{} holds records from `{}`, not `{}`",
                    path.display(),
                    r.model,
                    client.name()
                )));
            }
            if !ids.contains(r.question_id.as_str()) {
                log::warn!("{}: ignoring record for unknown question {}", path.display(), r.question_id);
                continue;
            }
            done.entry(r.question_id.clone()).or_insert(r);
        }
        let kept: Vec<EvalRecord> = questions.iter().filter_map(|q| done.get(&q.id).cloned()).collect();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        rewrite_store(path, &kept)?;
    }
    let resumed = done.len();

    let pending: Vec<&QuestionInstance> = questions.iter().filter(|q| !done.contains_key(&q.id)).collect();
    let writer = match store {
        Some(path) => {
            let f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::file(path, e))?;
            Some(Mutex::new(BufWriter::new(f)))
        }
        None => None,
    };
    let results: Mutex<Vec<Option<EvalRecord>>> = Mutex::new(vec![None; pending.len()]);
    let write_error: Mutex<Option<Error>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let params = settings.completion();
    let workers = settings.parallelism.min(pending.len()).max(1);
    log::info!("{}: {} questions to ask, {} resumed", client.name(), pending.len(), resumed);

    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = pending.get(i) else {
                    break;
                };
                let record = ask(q, client, settings, &params);
                if let Some(w) = &writer {
                    let mut w = w.lock().expect("store lock");
                    let res = serde_json::to_writer(&mut *w, &record)
                        .map_err(Error::from)
                        .and_then(|_| w.write_all(b"\n").map_err(Error::from))
                        .and_then(|_| w.flush().map_err(Error::from));
                    if let Err(e) = res {
                        write_error.lock().expect("error lock").get_or_insert(e);
                    }
                }
                results.lock().expect("results lock")[i] = Some(record);
                let finished = i + 1;
                if finished % 1000 == 0 {
                    log::info!("{}: {finished}/{} asked", client.name(), pending.len());
                }
            });
        }
    });
    if let Some(e) = write_error.into_inner().expect("error lock") {
        return Err(e);
    }
    drop(writer);

    for r in results.into_inner().expect("results lock").into_iter().flatten() {
        done.insert(r.question_id.clone(), r);
    }
    let records: Vec<EvalRecord> = questions
        .iter()
        .map(|q| done.remove(&q.id).expect("every question has a record"))
        .collect();

    let correct = records.iter().filter(|r| r.correct).count();
    let manifest = RunManifest {
        client: client.name().to_string(),
        client_settings: client.describe(),
        settings: settings.clone(),
        questions: questions.len(),
        resumed,
        queried: pending.len(),
        correct,
        unparseable: records.iter().filter(|r| r.parsed.is_none()).count(),
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        accuracy_pct: if records.is_empty() {
            0.0
        } else {
            100.0 * correct as f64 / records.len() as f64
        },
        started_at,
        finished_at: now(),
    };
    if let Some(path) = store {
        rewrite_store(path, &records)?;
        let mpath = manifest_path(path);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&mpath, text).map_err(|e| Error::file(&mpath, e))?;
    }
    Ok(EvalRun { records, manifest })
}

/// Reads a records file written by [`evaluate`].
pub fn read_records_file(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_records(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_up_to_the_cap() {
        let s = EvalSettings {
            backoff_initial_ms: 100,
            backoff_max_ms: 1000,
            ..EvalSettings::default()
        };
        let ms: Vec<u128> = (1..=6).map(|a| s.backoff(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(s.backoff(200).as_millis(), 1000);
    }

    #[test]
    fn settings_validation() {
        assert!(EvalSettings::default().validate().is_ok());
        let bad = EvalSettings {
            parallelism: 0,
            ..EvalSettings::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn manifest_sits_next_to_records() {
        assert_eq!(manifest_path(Path::new("out/run.jsonl")), Path::new("out/run.manifest.json"));
    }
}
