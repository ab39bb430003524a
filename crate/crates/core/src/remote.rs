//! Sampling and scoring through an OpenAI-compatible `/v1/completions`
//! endpoint that reports per-token log-probabilities.
//!
//! Requests are retried on timeouts, 429 and 5xx with exponential backoff
//! and never exceed `max_in_flight` concurrent requests. A sample's score is
//! the plain sum of the token log-probabilities the server reports.

use std::sync::Arc;
use std::time::Duration;

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::dpf::{k_dpf, ExactPotential, PotentialError, PotentialEstimate, SampleSet, StreamKey};
use crate::experiments::PotentialSource;
use crate::seqmodel::{Prompt, SamplerConfig, SequenceSample};

pub const DEFAULT_API_KEY_ENV: &str = "KDPS_API_KEY";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("server does not support echo scoring: {0}")]
    Capability(String),
    #[error("invalid remote configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Seconds.
    pub request_timeout: f64,
    pub max_retries: u32,
    /// Seconds; attempt `a` waits `backoff_base * 2^a`.
    pub backoff_base: f64,
    pub max_in_flight: usize,
    /// Generation length in tokens.
    pub max_tokens: usize,
    /// Largest `n` per request.
    pub n_max: usize,
    pub sampler: SamplerConfig,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            request_timeout: 60.0,
            max_retries: 3,
            backoff_base: 0.5,
            max_in_flight: 4,
            max_tokens: 16,
            n_max: 8,
            sampler: SamplerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RemoteError> {
        if !(self.request_timeout > 0.0) {
            return Err(RemoteError::Config("request_timeout must be positive".into()));
        }
        if !(self.backoff_base >= 0.0) {
            return Err(RemoteError::Config("backoff_base must be nonnegative".into()));
        }
        if self.max_in_flight < 1 || self.n_max < 1 {
            return Err(RemoteError::Config("max_in_flight and n_max must be at least 1".into()));
        }
        self.sampler.validate().map_err(|e| RemoteError::Config(e.to_string()))
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Identity of a remote completion: the server's tokens when reported,
/// otherwise the completion text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqKey {
    Tokens(Vec<String>),
    Text(String),
}

pub type RemoteSample = SequenceSample<SeqKey>;

enum Failure {
    Retryable(String),
    Status(u16, String),
    Other(RemoteError),
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    http: reqwest::Client,
    api_key: Option<String>,
    permits: Arc<Semaphore>,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self, RemoteError> {
        cfg.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout))
            .build()
            .map_err(|e| RemoteError::Config(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let permits = Arc::new(Semaphore::new(cfg.max_in_flight));
        Ok(RemoteClient { cfg, http, api_key, permits })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    async fn post_once(&self, body: &Value) -> Result<Value, Failure> {
        let _permit =
            self.permits.acquire().await.map_err(|e| Failure::Other(RemoteError::Transport(e.to_string())))?;
        let mut req = self.http.post(self.cfg.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Err(Failure::Retryable(e.to_string()))
            }
            Err(e) => return Err(Failure::Other(RemoteError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| Failure::Retryable(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Failure::Other(RemoteError::Protocol(format!("invalid JSON response: {e}")))),
            401 | 403 => Err(Failure::Other(RemoteError::Auth(status))),
            429 | 500..=599 => Err(Failure::Retryable(format!("HTTP {status}: {text}"))),
            _ => Err(Failure::Status(status, text)),
        }
    }

    /// Posts with retries. Non-retryable statuses come back as
    /// `Err((status, body))` in the inner result.
    async fn post(&self, body: &Value) -> Result<Result<Value, (u16, String)>, RemoteError> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(body).await {
                Ok(v) => return Ok(Ok(v)),
                Err(Failure::Status(code, text)) => return Ok(Err((code, text))),
                Err(Failure::Other(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(RemoteError::Transport(format!(
                            "giving up after {} attempt(s): {msg}",
                            attempt + 1
                        )));
                    }
                    let wait = self.cfg.backoff_base * 2f64.powi(attempt as i32);
                    tokio::time::sleep(Duration::from_secs_f64(wait)).await;
                    attempt += 1;
                }
            }
        }
    }

    /// One request for `n` completions.
    pub async fn sample(&self, prompt: &str, n: usize) -> Result<Vec<RemoteSample>, RemoteError> {
        if n < 1 {
            return Err(RemoteError::Config("n must be at least 1".into()));
        }
        let body = json!({
            "model": self.cfg.model_name,
            "prompt": prompt,
            "max_tokens": self.cfg.max_tokens,
            "temperature": self.cfg.sampler.temperature,
            "top_p": self.cfg.sampler.top_p,
            "n": n,
            "logprobs": 1,
            "echo": false,
        });
        let value =
            self.post(&body).await?.map_err(|(code, text)| RemoteError::Transport(format!("HTTP {code}: {text}")))?;
        parse_samples(&value)
    }

    /// `k` completions in `ceil(k / n_max)` concurrent requests, returned in
    /// draw order.
    pub async fn sample_k(&self, prompt: &str, k: usize) -> Result<Vec<RemoteSample>, RemoteError> {
        let batches: Vec<usize> = (0..k).step_by(self.cfg.n_max).map(|start| self.cfg.n_max.min(k - start)).collect();
        let results = try_join_all(batches.into_iter().map(|n| self.sample(prompt, n))).await?;
        Ok(results.into_iter().flatten().collect())
    }

    /// Log-probability of `completion` after `prompt`, via echo scoring.
    pub async fn score(&self, prompt: &str, completion: &str) -> Result<f64, RemoteError> {
        if completion.is_empty() {
            return Ok(0.0);
        }
        let body = json!({
            "model": self.cfg.model_name,
            "prompt": format!("{prompt}{completion}"),
            "max_tokens": 0,
            "temperature": self.cfg.sampler.temperature,
            "top_p": self.cfg.sampler.top_p,
            "n": 1,
            "logprobs": 1,
            "echo": true,
        });
        match self.post(&body).await? {
            Ok(value) => parse_echo_score(&value, prompt.chars().count()),
            Err((code @ (400 | 404 | 422 | 501), text)) => Err(RemoteError::Capability(format!("HTTP {code}: {text}"))),
            Err((code, text)) => Err(RemoteError::Transport(format!("HTTP {code}: {text}"))),
        }
    }
}

fn choices(value: &Value) -> Result<&Vec<Value>, RemoteError> {
    value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| RemoteError::Protocol("response has no `choices` array".into()))
}

fn logprobs_obj(choice: &Value) -> Result<&Value, RemoteError> {
    match choice.get("logprobs") {
        Some(v) if v.is_object() => Ok(v),
        _ => Err(RemoteError::Protocol("choice is missing `logprobs`".into())),
    }
}

fn token_logprobs(lp: &Value) -> Result<Vec<Option<f64>>, RemoteError> {
    lp.get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| RemoteError::Protocol("`logprobs` has no `token_logprobs`".into()))?
        .iter()
        .map(|x| match x {
            Value::Null => Ok(None),
            other => other
                .as_f64()
                .map(Some)
                .ok_or_else(|| RemoteError::Protocol(format!("non-numeric token logprob `{other}`"))),
        })
        .collect()
}

pub(crate) fn parse_samples(value: &Value) -> Result<Vec<RemoteSample>, RemoteError> {
    choices(value)?
        .iter()
        .map(|choice| {
            let text = choice
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| RemoteError::Protocol("choice is missing `text`".into()))?;
            let lp = logprobs_obj(choice)?;
            let mut logprob = 0.0;
            for x in token_logprobs(lp)? {
                logprob += x.ok_or_else(|| RemoteError::Protocol("null logprob for a generated token".into()))?;
            }
            let seq = match lp.get("tokens").and_then(Value::as_array) {
                Some(tokens) => SeqKey::Tokens(
                    tokens.iter().map(|t| t.as_str().map(str::to_owned).unwrap_or_else(|| t.to_string())).collect(),
                ),
                None => SeqKey::Text(text.to_owned()),
            };
            Ok(SequenceSample { seq, logprob })
        })
        .collect()
}

pub(crate) fn parse_echo_score(value: &Value, prompt_chars: usize) -> Result<f64, RemoteError> {
    let choice = choices(value)?.first().ok_or_else(|| RemoteError::Protocol("empty `choices`".into()))?;
    let lp = logprobs_obj(choice)?;
    let logprobs = token_logprobs(lp)?;
    let offsets = lp
        .get("text_offset")
        .and_then(Value::as_array)
        .ok_or_else(|| RemoteError::Protocol("echo response has no `text_offset`".into()))?;
    if offsets.len() != logprobs.len() {
        return Err(RemoteError::Protocol("`text_offset` and `token_logprobs` differ in length".into()));
    }
    let mut total = 0.0;
    for (off, lp) in offsets.iter().zip(logprobs) {
        let off = off.as_u64().ok_or_else(|| RemoteError::Protocol("non-integer text offset".into()))?;
        if off as usize >= prompt_chars {
            total += lp.ok_or_else(|| RemoteError::Protocol("null logprob for a completion token".into()))?;
        }
    }
    Ok(total)
}

/// Blocking adapter exposing a remote model to the experiment harness.
/// Enumeration is impossible, so references fall back to a large-`K`
/// estimate.
pub struct RemoteSource {
    client: RemoteClient,
    runtime: tokio::runtime::Runtime,
}

impl RemoteSource {
    pub fn new(cfg: RemoteConfig) -> Result<Self, RemoteError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .worker_threads(2)
            .build()
            .map_err(|e| RemoteError::Config(e.to_string()))?;
        // reqwest clients must be built inside a runtime context
        let client = {
            let _guard = runtime.enter();
            RemoteClient::new(cfg)?
        };
        Ok(RemoteSource { client, runtime })
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }

    pub fn sample_set(&self, prompt: &str, k: usize) -> Result<SampleSet<SeqKey>, RemoteError> {
        let draws = self.runtime.block_on(self.client.sample_k(prompt, k))?;
        Ok(SampleSet::from_draws(prompt, draws, 0, self.client.cfg.sampler))
    }

    pub fn score(&self, prompt: &str, completion: &str) -> Result<f64, RemoteError> {
        self.runtime.block_on(self.client.score(prompt, completion))
    }
}

impl PotentialSource for RemoteSource {
    type Seq = SeqKey;

    fn estimate(
        &self,
        prompt: &Prompt,
        _key: StreamKey,
        k: usize,
    ) -> Result<PotentialEstimate<SeqKey>, PotentialError> {
        let mut last = None;
        for _ in 0..=self.client.cfg.sampler.max_resample_attempts {
            let set = self
                .sample_set(&prompt.key, k)
                .map_err(|e| PotentialError::Domain(format!("remote sampling failed: {e}")))?;
            match k_dpf(&set) {
                Ok(est) => return Ok(est),
                Err(e @ PotentialError::DegenerateSample { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or(PotentialError::DegenerateSample { distinct: 0 }))
    }

    fn exact(&self, _prompt: &Prompt) -> Result<ExactPotential, PotentialError> {
        Err(PotentialError::NotEnumerable("oracle requires an enumerable toy model".into()))
    }

    fn parallel(&self) -> bool {
        false
    }
}
