use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::Deserialize;

use super::remote::{Provider, RemoteClient};
use super::{ClientError, CompletionParams, ModelClient, Query};
use crate::error::{Error, Result};
use crate::market_data::{compute_returns, PriceTable};
use crate::metrics::{self, Portfolio};
use crate::question::QuestionInstance;
use crate::seed;

fn choice_text(k: u8) -> String {
    format!("({k})")
}

/// Answers with the displayed choice that is best on the question's own
/// price window. Scores 100% on any dataset that validates.
#[derive(Debug, Clone)]
pub struct OracleClient {
    answers: HashMap<String, u8>,
}

impl OracleClient {
    pub fn new(questions: &[QuestionInstance], prices: &PriceTable) -> Result<Self> {
        let mut answers = HashMap::with_capacity(questions.len());
        for q in questions {
            let r = compute_returns(prices, q.start, q.end, &q.tickers)?;
            let mut best: Option<(u8, f64)> = None;
            for i in 0..q.choices.len() {
                let w = Portfolio::normalized(&q.displayed_weights(i))?;
                let v = match metrics::objective_value(&q.objective, &r, &w) {
                    Ok(v) => v,
                    Err(Error::DegenerateMetric(_)) => continue,
                    Err(e) => return Err(e),
                };
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((i as u8 + 1, v));
                }
            }
            let (k, _) = best.ok_or_else(|| Error::DegenerateMetric(format!("no choice of {} has a defined objective", q.id)))?;
            answers.insert(q.id.clone(), k);
        }
        Ok(OracleClient { answers })
    }

    /// The oracle's pick for `id`, if the question was given to [`OracleClient::new`].
    pub fn pick(&self, id: &str) -> Option<u8> {
        self.answers.get(id).copied()
    }
}

impl ModelClient for OracleClient {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete(&self, query: &Query<'_>, _: &CompletionParams) -> Result<String, ClientError> {
        self.pick(query.question_id)
            .map(choice_text)
            .ok_or_else(|| ClientError::Fatal(format!("oracle has no answer for {}", query.question_id)))
    }
}

/// Uniform over the four positions. The draw for a question depends only
/// on the seed and the question id.
#[derive(Debug, Clone, Copy)]
pub struct RandomClient {
    seed: u64,
}

impl RandomClient {
    pub fn new(seed: u64) -> Self {
        RandomClient { seed }
    }
}

impl ModelClient for RandomClient {
    fn name(&self) -> &str {
        "random"
    }

    fn complete(&self, query: &Query<'_>, _: &CompletionParams) -> Result<String, ClientError> {
        let mut rng = seed::rng(seed::derive_seed_str(self.seed, query.question_id));
        Ok(choice_text(rng.random_range(1..=4)))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "seed": self.seed })
    }
}

/// Always answers `k`.
#[derive(Debug, Clone)]
pub struct ConstantClient {
    k: u8,
    name: String,
}

impl ConstantClient {
    pub fn new(k: u8) -> Result<Self> {
        if !(1..=4).contains(&k) {
            return Err(Error::Parameter(format!("constant choice {k} is not in 1..=4")));
        }
        Ok(ConstantClient {
            k,
            name: format!("constant-{k}"),
        })
    }
}

impl ModelClient for ConstantClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _: &Query<'_>, _: &CompletionParams) -> Result<String, ClientError> {
        Ok(choice_text(self.k))
    }
}

#[derive(Deserialize)]
struct ReplayLine {
    question_id: String,
    response: String,
}

/// Scripted responses keyed by question id, read from JSON lines of the
/// form `{"question_id": "...", "response": "..."}`.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    name: String,
    responses: HashMap<String, String>,
}

impl ReplayClient {
    pub fn new(name: impl Into<String>, responses: HashMap<String, String>) -> Self {
        ReplayClient {
            name: name.into(),
            responses,
        }
    }

    pub fn from_reader<R: BufRead>(name: impl Into<String>, input: R) -> Result<Self> {
        let mut responses = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
            if responses.insert(entry.question_id.clone(), entry.response).is_some() {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("duplicate question id {}", entry.question_id),
                });
            }
        }
        Ok(ReplayClient::new(name, responses))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_reader(format!("replay-{stem}"), BufReader::new(file))
    }
}

impl ModelClient for ReplayClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, query: &Query<'_>, _: &CompletionParams) -> Result<String, ClientError> {
        self.responses
            .get(query.question_id)
            .cloned()
            .ok_or_else(|| ClientError::Fatal(format!("no scripted response for {}", query.question_id)))
    }
}

/// Client selector as written on the command line: `oracle`, `random`,
/// `constant:K`, `replay:PATH`, or `PROVIDER:MODEL` for a remote provider.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientSpec {
    Oracle,
    Random,
    Constant(u8),
    Replay(PathBuf),
    Remote { provider: Provider, model: String },
}

impl FromStr for ClientSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("oracle", None) => Ok(ClientSpec::Oracle),
            ("random", None) => Ok(ClientSpec::Random),
            ("constant", Some(k)) => k
                .parse()
                .map(ClientSpec::Constant)
                .map_err(|_| Error::Parameter(format!("constant choice `{k}` is not an integer"))),
            ("replay", Some(p)) if !p.is_empty() => Ok(ClientSpec::Replay(PathBuf::from(p))),
            (provider, Some(model)) if !model.is_empty() => match provider.parse::<Provider>() {
                Ok(provider) => Ok(ClientSpec::Remote {
                    provider,
                    model: model.to_string(),
                }),
                Err(_) => Err(Error::Parameter(format!("unknown client `{s}`"))),
            },
            _ => Err(Error::Parameter(format!("unknown client `{s}`"))),
        }
    }
}

impl fmt::Display for ClientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientSpec::Oracle => write!(f, "oracle"),
            ClientSpec::Random => write!(f, "random"),
            ClientSpec::Constant(k) => write!(f, "constant:{k}"),
            ClientSpec::Replay(p) => write!(f, "replay:{}", p.display()),
            ClientSpec::Remote { provider, model } => write!(f, "{}:{model}", provider.key()),
        }
    }
}

/// What a client may need at construction time.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a> {
    pub questions: &'a [QuestionInstance],
    pub prices: Option<&'a PriceTable>,
    pub seed: u64,
}

/// Builds the client named by `spec`. Remote clients read their API key
/// from the environment here, so missing credentials fail before any call.
pub fn build_client(spec: &ClientSpec, ctx: ClientContext<'_>) -> Result<Box<dyn ModelClient>> {
    Ok(match spec {
        ClientSpec::Oracle => {
            let prices = ctx
                .prices
                .ok_or_else(|| Error::Setup("the oracle client needs the price data".into()))?;
            Box::new(OracleClient::new(ctx.questions, prices)?)
        }
        ClientSpec::Random => Box::new(RandomClient::new(ctx.seed)),
        ClientSpec::Constant(k) => Box::new(ConstantClient::new(*k)?),
        ClientSpec::Replay(path) => Box::new(ReplayClient::from_file(path)?),
        ClientSpec::Remote { provider, model } => Box::new(RemoteClient::from_env(*provider, model)?),
    })
}
