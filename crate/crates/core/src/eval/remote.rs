use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ClientError, CompletionParams, ModelClient, Query};
use crate::error::{Error, Result};

/// Appended to every prompt sent to a remote model.
pub const RESPONSE_SUFFIX: &str = "Respond with the number of your chosen option in parentheses.";

/// Providers reachable through an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[serde(rename = "openai")]
    OpenAi,
    Gemini,
    Together,
}

impl Provider {
    pub const ALL: [Provider; 3] = [Provider::OpenAi, Provider::Gemini, Provider::Together];

    pub fn key(self) -> &'static str {
        match self {
            Provider::OpenAi => "openai",
            Provider::Gemini => "gemini",
            Provider::Together => "together",
        }
    }

    /// Environment variable holding the API key, e.g. `OPENAI_API_KEY`.
    pub fn key_var(self) -> String {
        format!("{}_API_KEY", self.key().to_uppercase())
    }

    /// Environment variable that overrides the endpoint base URL.
    pub fn base_url_var(self) -> String {
        format!("{}_BASE_URL", self.key().to_uppercase())
    }

    pub fn default_base_url(self) -> &'static str {
        match self {
            Provider::OpenAi => "https://api.openai.com/v1",
            Provider::Gemini => "https://generativelanguage.googleapis.com/v1beta/openai",
            Provider::Together => "https://api.together.xyz/v1",
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Provider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provider::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown provider `{s}`")))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct RemoteClient {
    provider: Provider,
    model: String,
    name: String,
    api_key: String,
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(provider: Provider, model: &str, api_key: String, base_url: String) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        RemoteClient {
            provider,
            model: model.to_string(),
            name: format!("{provider}:{model}"),
            api_key,
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    /// Reads the API key (and an optional base URL override) from the
    /// environment.
    pub fn from_env(provider: Provider, model: &str) -> Result<Self> {
        let var = provider.key_var();
        let key = std::env::var(&var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| Error::Setup(format!("{var} is not set")))?;
        let base = std::env::var(provider.base_url_var())
            .ok()
            .filter(|u| !u.trim().is_empty())
            .unwrap_or_else(|| provider.default_base_url().to_string());
        Ok(RemoteClient::new(provider, model, key, base))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

fn retry_after(resp: &ureq::http::Response<ureq::Body>) -> Option<Duration> {
    let v = resp.headers().get("retry-after")?.to_str().ok()?;
    v.trim().parse::<f64>().ok().and_then(|s| Duration::try_from_secs_f64(s).ok())
}

impl ModelClient for RemoteClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, query: &Query<'_>, params: &CompletionParams) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": format!("{}\n\n{RESPONSE_SUFFIX}", query.prompt) }],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let sent = self
            .agent
            .post(self.endpoint())
            .config()
            .timeout_global(Some(params.timeout))
            .build()
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut resp = match sent {
            Ok(r) => r,
            Err(
                e @ (ureq::Error::Timeout(_)
                | ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound),
            ) => return Err(ClientError::Transient(e.to_string())),
            Err(e) => return Err(ClientError::Fatal(e.to_string())),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            429 => {
                return Err(ClientError::RateLimited {
                    retry_after: retry_after(&resp),
                })
            }
            408 | 500..=599 => return Err(ClientError::Transient(format!("HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                let snippet: String = text.chars().take(200).collect();
                return Err(ClientError::Fatal(format!("HTTP {status}: {snippet}")));
            }
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Transient(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| ClientError::Transient("response has no choices".into()))
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "provider": self.provider,
            "model": self.model,
            "endpoint": self.endpoint(),
            "suffix": RESPONSE_SUFFIX,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_names_and_variables() {
        assert_eq!("gemini".parse::<Provider>().unwrap(), Provider::Gemini);
        assert!("anthropic".parse::<Provider>().is_err());
        assert_eq!(Provider::OpenAi.key_var(), "OPENAI_API_KEY");
        assert_eq!(Provider::Together.base_url_var(), "TOGETHER_BASE_URL");
        let c = RemoteClient::new(Provider::OpenAi, "m", "k".into(), "http://localhost:1/v1/".into());
        assert_eq!(c.endpoint(), "http://localhost:1/v1/chat/completions");
        assert_eq!(c.name(), "openai:m");
    }
}
