//! OpenAI-compatible remote clients.
//!
//! One provider struct speaks the three endpoint shapes: POST
//! `{base_url}/embeddings`, POST `{base_url}/completions` (with logprob
//! fields) and POST `{base_url}/chat/completions`. Bearer tokens come from a
//! configured environment variable, never from flags or files. Responses are
//! cached content-addressed when a cache is attached; transport failures are
//! retried on a fixed exponential schedule; non-2xx responses are not
//! retried.
//!
//! Completion scoring uses the echo convention: the prompt and completion
//! are sent as one string with `echo` and `logprobs` set, and the
//! completion's tokens are selected by text offset. Beam width maps to
//! `best_of` where the protocol allows; chat endpoints fall back to greedy
//! (temperature 0) generation and cannot score.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::vocab::EmbeddingVector;

use super::cache::{canonical_json, ResponseCache};
use super::{
    attribute_prompt, split_attribute_response, AttributeProvider, CaptionProvider, EmbedInput,
    EmbeddingProvider, Generation, LmProvider, LmScore,
};

const RETRY_ATTEMPTS: u32 = 3;
const DEFAULT_RETRY_BASE_MS: u64 = 250;
const CAPTION_TEMPERATURE: f64 = 1.0;
const CAPTION_TOP_P: f64 = 0.9;
const CAPTION_MAX_TOKENS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointKind {
    Embeddings,
    Completions,
    Chat,
}

impl EndpointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EndpointKind::Embeddings => "embeddings",
            EndpointKind::Completions => "completions",
            EndpointKind::Chat => "chat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "embeddings" => Ok(EndpointKind::Embeddings),
            "completions" => Ok(EndpointKind::Completions),
            "chat" => Ok(EndpointKind::Chat),
            other => Err(Error::Arg(format!("unknown endpoint kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub base_url: String,
    pub endpoint: EndpointKind,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl ProviderConfig {
    pub fn new(
        base_url: impl Into<String>,
        endpoint: EndpointKind,
        model: impl Into<String>,
    ) -> Self {
        ProviderConfig {
            base_url: base_url.into(),
            endpoint,
            model: model.into(),
            auth_env: None,
            timeout_secs: 60,
            max_in_flight: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_secs == 0 {
            return Err(Error::Arg("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Arg("max_in_flight must be at least 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(Error::Arg("base_url is empty".into()));
        }
        Ok(())
    }
}

/// Counting gate bounding concurrent requests.
struct InFlightGate {
    state: Mutex<usize>,
    cv: Condvar,
    limit: usize,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        InFlightGate {
            state: Mutex::new(0),
            cv: Condvar::new(),
            limit,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        Permit { gate: self }
    }
}

struct Permit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.cv.notify_one();
    }
}

pub struct RemoteProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    cache: Option<ResponseCache>,
    gate: InFlightGate,
    retry_base: Duration,
    caption_seed: Option<u64>,
}

impl RemoteProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::provider(e.to_string()))?;
        let gate = InFlightGate::new(config.max_in_flight);
        Ok(RemoteProvider {
            config,
            client,
            cache: None,
            gate,
            retry_base: Duration::from_millis(DEFAULT_RETRY_BASE_MS),
            caption_seed: None,
        })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Recorded sampling seed passed through on caption requests.
    pub fn with_caption_seed(mut self, seed: u64) -> Self {
        self.caption_seed = Some(seed);
        self
    }

    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn provider_identity(&self) -> String {
        format!("{}@{}", self.config.model, self.config.base_url)
    }

    fn bearer_token(&self) -> Option<String> {
        self.config
            .auth_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
    }

    fn post(&self, path: &str, body: &Value, operation: &str) -> Result<Value> {
        let identity = self.provider_identity();
        let canonical = canonical_json(body);
        let digest = ResponseCache::digest(&identity, operation, &canonical);
        if let Some(cache) = &self.cache {
            if let Some(bytes) = cache.lookup(&identity, &digest) {
                if let Ok(v) = serde_json::from_slice::<Value>(&bytes) {
                    return Ok(v);
                }
            }
        }
        let _permit = self.gate.acquire();
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), path);
        let token = self.bearer_token();
        let mut last_transport = String::new();
        for attempt in 0..RETRY_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.retry_base * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last_transport = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => {
                    last_transport = e.to_string();
                    continue;
                }
            };
            if !status.is_success() {
                let excerpt: String = text.chars().take(200).collect();
                return Err(Error::Provider {
                    status: Some(status.as_u16()),
                    msg: excerpt,
                });
            }
            let value: Value = serde_json::from_str(&text).map_err(|e| Error::Provider {
                status: Some(status.as_u16()),
                msg: format!("invalid JSON response: {e}"),
            })?;
            if let Some(cache) = &self.cache {
                cache.store(&identity, &digest, text.as_bytes())?;
            }
            return Ok(value);
        }
        Err(Error::RetryableProvider(format!(
            "{url}: {last_transport} (after {RETRY_ATTEMPTS} attempts)"
        )))
    }

    fn require(&self, wanted: EndpointKind, what: &str) -> Result<()> {
        if self.config.endpoint != wanted {
            return Err(Error::Capability(format!(
                "{what} needs a {} endpoint, this provider is configured as {}",
                wanted.as_str(),
                self.config.endpoint.as_str()
            )));
        }
        Ok(())
    }

    /// Issue a generation request and return (text, finish_reason) pairs.
    fn completion_choices(
        &self,
        prompt: &str,
        n: u64,
        body_extra: Value,
    ) -> Result<Vec<(String, Option<String>)>> {
        let value = match self.config.endpoint {
            EndpointKind::Completions => {
                let mut body = json!({
                    "model": self.config.model,
                    "prompt": prompt,
                    "n": n,
                });
                merge(&mut body, body_extra);
                self.post("/completions", &body, "completions")?
            }
            EndpointKind::Chat => {
                let mut body = json!({
                    "model": self.config.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "n": n,
                });
                merge(&mut body, body_extra);
                self.post("/chat/completions", &body, "chat")?
            }
            EndpointKind::Embeddings => {
                return Err(Error::Capability(
                    "text generation needs a completions or chat endpoint".into(),
                ))
            }
        };
        let choices = value
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::provider("response has no choices"))?;
        choices
            .iter()
            .map(|c| {
                let text = match self.config.endpoint {
                    EndpointKind::Chat => c.pointer("/message/content").and_then(Value::as_str),
                    _ => c.get("text").and_then(Value::as_str),
                };
                let finish = c
                    .get("finish_reason")
                    .and_then(Value::as_str)
                    .map(str::to_string);
                text.map(|t| (t.to_string(), finish))
                    .ok_or_else(|| Error::provider("choice has no text"))
            })
            .collect()
    }
}

fn merge(base: &mut Value, extra: Value) {
    if let (Some(base_map), Value::Object(extra_map)) = (base.as_object_mut(), extra) {
        for (k, v) in extra_map {
            base_map.insert(k, v);
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn identity(&self) -> String {
        self.provider_identity()
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector> {
        self.require(EndpointKind::Embeddings, "embed")?;
        if input.key().is_empty() {
            return Err(Error::Arg("empty embedding input".into()));
        }
        let mut body = json!({
            "model": self.config.model,
            "input": input.key(),
        });
        if let EmbedInput::Image(_) = input {
            merge(&mut body, json!({"modality": "image"}));
        }
        let value = self.post("/embeddings", &body, "embeddings")?;
        let raw = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::provider("response has no embedding"))?;
        let values: Option<Vec<f64>> = raw.iter().map(Value::as_f64).collect();
        EmbeddingVector::new(values.ok_or_else(|| Error::provider("non-numeric embedding"))?)
    }
}

impl CaptionProvider for RemoteProvider {
    fn identity(&self) -> String {
        self.provider_identity()
    }

    fn captions(&self, image_ref: &str, n: usize) -> Result<Vec<String>> {
        if n == 0 {
            return Err(Error::Arg("caption count must be at least 1".into()));
        }
        let mut extra = json!({
            "temperature": CAPTION_TEMPERATURE,
            "top_p": CAPTION_TOP_P,
            "max_tokens": CAPTION_MAX_TOKENS,
        });
        if let Some(seed) = self.caption_seed {
            merge(&mut extra, json!({"seed": seed}));
        }
        let choices = self.completion_choices(image_ref, n as u64, extra)?;
        if choices.len() != n {
            return Err(Error::provider(format!(
                "asked for {n} captions, got {}",
                choices.len()
            )));
        }
        Ok(choices.into_iter().map(|(text, _)| text).collect())
    }
}

impl AttributeProvider for RemoteProvider {
    fn identity(&self) -> String {
        self.provider_identity()
    }

    fn attributes(&self, tag: &str) -> Result<Vec<String>> {
        if tag.is_empty() {
            return Err(Error::Arg("empty tag".into()));
        }
        let prompt = attribute_prompt(tag);
        let choices =
            self.completion_choices(&prompt, 1, json!({"temperature": 0.0, "max_tokens": 256}))?;
        let attributes = split_attribute_response(&choices[0].0);
        if attributes.is_empty() {
            return Err(Error::provider(format!(
                "empty attribute response for '{tag}'"
            )));
        }
        Ok(attributes)
    }
}

impl LmProvider for RemoteProvider {
    fn identity(&self) -> String {
        self.provider_identity()
    }

    fn score(&self, prompt: &str, completion: &str) -> Result<LmScore> {
        self.require(EndpointKind::Completions, "logprob scoring")?;
        if completion.is_empty() {
            return Err(Error::Arg("empty completion".into()));
        }
        let body = json!({
            "model": self.config.model,
            "prompt": format!("{prompt}{completion}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let value = self.post("/completions", &body, "score")?;
        let lp = value
            .pointer("/choices/0/logprobs")
            .filter(|v| !v.is_null())
            .ok_or_else(|| Error::Capability("provider returned no logprobs".into()))?;
        let tokens = lp
            .get("tokens")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::provider("logprobs without tokens"))?;
        let token_logprobs = lp
            .get("token_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::provider("logprobs without token_logprobs"))?;
        let offsets = lp
            .get("text_offset")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::provider("logprobs without text_offset"))?;
        let mut out_tokens = Vec::new();
        let mut out_logprobs = Vec::new();
        for ((tok, lp), off) in tokens.iter().zip(token_logprobs).zip(offsets) {
            let off = off
                .as_u64()
                .ok_or_else(|| Error::provider("non-numeric text_offset"))?
                as usize;
            if off < prompt.len() {
                continue;
            }
            let tok = tok
                .as_str()
                .ok_or_else(|| Error::provider("non-string token"))?;
            let lp = lp
                .as_f64()
                .ok_or_else(|| Error::provider("null logprob inside completion"))?;
            out_tokens.push(tok.to_string());
            out_logprobs.push(lp);
        }
        if out_tokens.is_empty() {
            return Err(Error::provider("no completion tokens in echo response"));
        }
        LmScore::new(out_tokens, out_logprobs)
    }

    fn generate(&self, prompt: &str, beam_width: usize, max_tokens: usize) -> Result<Generation> {
        if beam_width == 0 {
            return Err(Error::Arg("beam width must be at least 1".into()));
        }
        let mut extra = json!({
            "temperature": 0.0,
            "max_tokens": max_tokens as u64,
        });
        // best_of is the closest completions-protocol knob to a beam width;
        // chat endpoints have none and run greedy.
        if beam_width > 1 && self.config.endpoint == EndpointKind::Completions {
            merge(&mut extra, json!({"best_of": beam_width as u64}));
        }
        let choices = self.completion_choices(prompt, 1, extra)?;
        let (text, finish) = choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::provider("empty choices"))?;
        Ok(Generation {
            truncated: finish.as_deref() == Some("length"),
            text,
        })
    }
}
