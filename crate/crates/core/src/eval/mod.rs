//! Running questions past answer-choosing clients and scoring the replies.
//!
//! A [`ModelClient`] turns a rendered prompt into response text. The
//! builtin clients ([`OracleClient`], [`RandomClient`], [`ReplayClient`],
//! [`ConstantClient`]) need no network and calibrate the harness; the
//! remote clients speak the OpenAI-style chat-completions protocol.

mod client;
mod parse;
mod remote;
mod report;
mod run;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{build_client, ClientContext, ClientSpec, ConstantClient, OracleClient, RandomClient, ReplayClient};
pub use parse::parse_answer;
pub use remote::{Provider, RemoteClient, RESPONSE_SUFFIX};
pub use report::{aggregate, render_report, AccuracyReport, AccuracyTable, Dimension, ReportFormat, ReportRow, Tally};
pub use run::{
    evaluate, manifest_path, read_records, read_records_file, write_records, EvalRecord, EvalRun, EvalSettings, RunManifest,
};

/// One prompt sent to a client.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub question_id: &'a str,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.0,
            max_tokens: 256,
            timeout: Duration::from_secs(60),
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    /// The provider asked us to slow down.
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    /// Worth retrying: timeouts, connection resets, 5xx.
    #[error("transient failure: {0}")]
    Transient(String),
    /// Retrying cannot help.
    #[error("{0}")]
    Fatal(String),
}

/// Something that answers prompts. Implementations must not depend on call
/// order, since questions are sent from several threads.
pub trait ModelClient: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, query: &Query<'_>, params: &CompletionParams) -> Result<String, ClientError>;

    /// Client settings worth recording in the run manifest.
    fn describe(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}
