//! Chat backends for the three model roles.
//!
//! The search loop drives three roles — `main` proposes equations, `data`
//! analyzes the dataset, `idea` reflects on evaluated candidates — over one
//! transport abstraction. Three implementations exist:
//!
//! - [`HttpBackend`]: a chat-completions HTTP endpoint (`POST
//!   /v1/chat/completions`, bearer token), with retry/backoff on transient
//!   failures. Works against any server speaking that protocol.
//! - [`ReplayBackend`]: serves a scripted sequence of completions per role,
//!   making full runs deterministic and offline-testable. Exhausting the
//!   script is an error, never silent repetition.
//! - [`OracleBackend`]: computes completions from the request via a closure;
//!   used by tests that need prompt-dependent behavior.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// The model role a request is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Main,
    Data,
    Idea,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Main => "main",
            Role::Data => "data",
            Role::Idea => "idea",
        }
    }
}

/// Decoding parameters. `top_k` is not expressible in the standard chat
/// protocol; when a serving endpoint rejects it the client drops the field
/// and logs a warning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub top_p: f64,
}

impl SamplingParams {
    /// Defaults for the data-analysis role.
    pub fn data_default() -> Self {
        SamplingParams { temperature: 0.6, top_k: Some(30), top_p: 0.3 }
    }

    /// Defaults for the generation and reflection roles.
    pub fn main_default() -> Self {
        SamplingParams { temperature: 0.8, top_k: None, top_p: 0.95 }
    }

    pub fn for_role(role: Role) -> Self {
        match role {
            Role::Data => Self::data_default(),
            Role::Main | Role::Idea => Self::main_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role: Role,
    pub system_prompt: String,
    pub user_prompt: String,
    pub sampling: SamplingParams,
    pub n_samples: usize,
}

impl ChatRequest {
    pub fn new(role: Role, system_prompt: &str, user_prompt: &str, n_samples: usize) -> Self {
        assert!(n_samples >= 1, "n_samples must be at least 1");
        ChatRequest {
            role,
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            sampling: SamplingParams::for_role(role),
            n_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub completions: Vec<String>,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("replay script exhausted: no {role} entry at sequence index {index}")]
    ScriptExhausted { role: &'static str, index: usize },
    #[error("replay script mismatch at {role}[{index}]: {message}")]
    ScriptMismatch { role: &'static str, index: usize, message: String },
    #[error("malformed backend payload: {0}")]
    MalformedPayload(String),
    #[error("backend returned an empty completion for role {0}")]
    EmptyCompletion(&'static str),
    #[error("replay script error: {0}")]
    Script(String),
}

/// A chat transport. Implementations must be safe for use behind `&self`.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Short identifier recorded in run manifests.
    fn id(&self) -> &str;

    /// Whether two identical request sequences yield identical responses.
    fn deterministic(&self) -> bool {
        false
    }
}

// ── replay backend ─────────────────────────────────────────────────

/// One scripted reply: the `sequence_index`-th request of `role` receives
/// these completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(rename = "match")]
    pub key: ReplayKey,
    pub completions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayKey {
    pub role: Role,
    pub sequence_index: usize,
}

/// An ordered list of scripted replies, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayScript(pub Vec<ReplayEntry>);

impl ReplayScript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an entry with the next free sequence index for `role`.
    pub fn push(&mut self, role: Role, completions: Vec<String>) {
        let index = self.0.iter().filter(|e| e.key.role == role).count();
        self.0.push(ReplayEntry { key: ReplayKey { role, sequence_index: index }, completions });
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Script(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| LlmError::Script(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))
    }
}

/// Deterministic backend serving a [`ReplayScript`]. Per-role sequence
/// counters advance on every request for that role.
pub struct ReplayBackend {
    entries: BTreeMap<(Role, usize), Vec<String>>,
    cursors: Mutex<BTreeMap<Role, usize>>,
}

impl ReplayBackend {
    pub fn new(script: ReplayScript) -> Result<Self, LlmError> {
        let mut entries = BTreeMap::new();
        for entry in script.0 {
            let key = (entry.key.role, entry.key.sequence_index);
            if entries.insert(key, entry.completions).is_some() {
                return Err(LlmError::Script(format!(
                    "duplicate entry for {}[{}]",
                    key.0.name(),
                    key.1
                )));
            }
        }
        Ok(ReplayBackend { entries, cursors: Mutex::new(BTreeMap::new()) })
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        Self::new(ReplayScript::load(path)?)
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry(req.role).or_insert(0);
        let index = *cursor;
        let Some(completions) = self.entries.get(&(req.role, index)) else {
            return Err(LlmError::ScriptExhausted { role: req.role.name(), index });
        };
        if completions.len() != req.n_samples {
            return Err(LlmError::ScriptMismatch {
                role: req.role.name(),
                index,
                message: format!(
                    "entry holds {} completions, request wants {}",
                    completions.len(),
                    req.n_samples
                ),
            });
        }
        *cursor += 1;
        Ok(ChatResponse {
            completions: completions.clone(),
            latency_ms: 0,
            backend_id: "replay".to_string(),
        })
    }

    fn id(&self) -> &str {
        "replay"
    }

    fn deterministic(&self) -> bool {
        true
    }
}

// ── oracle backend ─────────────────────────────────────────────────

type OracleFn = dyn Fn(&ChatRequest) -> Vec<String> + Send + Sync;

/// Backend computing completions from the request; for tests that need
/// prompt-dependent replies.
pub struct OracleBackend {
    f: Box<OracleFn>,
}

impl OracleBackend {
    pub fn new(f: impl Fn(&ChatRequest) -> Vec<String> + Send + Sync + 'static) -> Self {
        OracleBackend { f: Box::new(f) }
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let completions = (self.f)(req);
        if completions.len() != req.n_samples {
            return Err(LlmError::MalformedPayload(format!(
                "oracle produced {} completions for n_samples={}",
                completions.len(),
                req.n_samples
            )));
        }
        Ok(ChatResponse { completions, latency_ms: 0, backend_id: "oracle".to_string() })
    }

    fn id(&self) -> &str {
        "oracle"
    }

    fn deterministic(&self) -> bool {
        true
    }
}

// ── sampling-override wrapper ──────────────────────────────────────

/// Wraps another backend, rewriting per-role decoding parameters before
/// dispatch. Lets a run config override sampling without threading settings
/// through every call site.
pub struct SamplingOverrideBackend {
    inner: Box<dyn ChatBackend>,
    main: Option<SamplingParams>,
    data: Option<SamplingParams>,
    idea: Option<SamplingParams>,
}

impl SamplingOverrideBackend {
    pub fn new(
        inner: Box<dyn ChatBackend>,
        main: Option<SamplingParams>,
        data: Option<SamplingParams>,
        idea: Option<SamplingParams>,
    ) -> Self {
        SamplingOverrideBackend { inner, main, data, idea }
    }
}

impl ChatBackend for SamplingOverrideBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let overridden = match req.role {
            Role::Main => self.main,
            Role::Data => self.data,
            Role::Idea => self.idea,
        };
        match overridden {
            Some(sampling) => {
                let mut req = req.clone();
                req.sampling = sampling;
                self.inner.complete(&req)
            }
            None => self.inner.complete(req),
        }
    }

    fn id(&self) -> &str {
        self.inner.id()
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

// ── live HTTP backend ──────────────────────────────────────────────

/// Environment variable naming the API base URL, e.g. `https://host:8000`.
pub const ENV_API_BASE: &str = "EQSEARCH_API_BASE";
/// Environment variable holding the bearer token (optional).
pub const ENV_API_KEY: &str = "EQSEARCH_API_KEY";
/// Environment variable naming the model; overrides the config value.
pub const ENV_MODEL: &str = "EQSEARCH_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; `/v1/chat/completions` is appended (a trailing `/v1` is
    /// tolerated).
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_max_retries() -> usize {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_s() -> u64 {
    120
}

impl HttpConfig {
    /// Build a config from the environment, falling back to `model` when
    /// `EQSEARCH_MODEL` is unset.
    pub fn from_env(model_fallback: Option<&str>) -> Result<Self, LlmError> {
        let base_url = std::env::var(ENV_API_BASE).map_err(|_| {
            LlmError::Transport { attempts: 0, message: format!("{ENV_API_BASE} is not set") }
        })?;
        let model = std::env::var(ENV_MODEL)
            .ok()
            .or_else(|| model_fallback.map(str::to_string))
            .ok_or_else(|| LlmError::Transport {
                attempts: 0,
                message: format!("no model configured and {ENV_MODEL} is not set"),
            })?;
        Ok(HttpConfig {
            base_url,
            model,
            api_key: std::env::var(ENV_API_KEY).ok(),
            max_retries: default_max_retries(),
            initial_backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
        })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

/// Chat-completions client with exponential-backoff retries. Transient
/// transport failures, 429s, and 5xx responses are retried; 4xx responses
/// trigger the `top_k`-drop and `n>1`-fallback downgrades before giving up.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| LlmError::Transport { attempts: 0, message: e.to_string() })?;
        let base = config.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        let url = format!("{base}/v1/chat/completions");
        Ok(HttpBackend { config, client, url })
    }

    fn post_once(&self, body: &WireRequest<'_>) -> Result<Vec<String>, PostError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| PostError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(PostError::Transient(format!("HTTP {status}")));
        }
        if status.is_client_error() {
            let text = resp.text().unwrap_or_default();
            return Err(PostError::Rejected(format!("HTTP {status}: {text}")));
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| PostError::Malformed(format!("bad response body: {e}")))?;
        if parsed.choices.is_empty() {
            return Err(PostError::Malformed("response has no choices".to_string()));
        }
        Ok(parsed.choices.into_iter().map(|c| c.message.content).collect())
    }

    fn post_with_retries(&self, body: &WireRequest<'_>) -> Result<Vec<String>, PostError> {
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.post_once(body) {
                Ok(done) => return Ok(done),
                Err(PostError::Transient(msg)) => {
                    last = msg;
                    if attempt < self.config.max_retries {
                        log::warn!(
                            "transient backend failure (attempt {}/{}): {last}; retrying in {:?}",
                            attempt + 1,
                            self.config.max_retries,
                            backoff
                        );
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
                Err(other) => return Err(other),
            }
        }
        Err(PostError::Exhausted(self.config.max_retries + 1, last))
    }
}

enum PostError {
    /// Connection failures, 429, 5xx: worth retrying.
    Transient(String),
    /// 4xx: the request itself was refused.
    Rejected(String),
    Malformed(String),
    Exhausted(usize, String),
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let mut messages = Vec::new();
        if !req.system_prompt.is_empty() {
            messages.push(WireMessage { role: "system", content: &req.system_prompt });
        }
        messages.push(WireMessage { role: "user", content: &req.user_prompt });

        let mut body = WireRequest {
            model: &self.config.model,
            messages,
            temperature: req.sampling.temperature,
            top_p: req.sampling.top_p,
            n: req.n_samples,
            top_k: req.sampling.top_k,
        };

        let mut completions = loop {
            match self.post_with_retries(&body) {
                Ok(c) => break c,
                Err(PostError::Rejected(msg)) if body.top_k.is_some() => {
                    // the endpoint does not speak top_k; degrade gracefully
                    log::warn!("endpoint rejected request with top_k ({msg}); dropping the field");
                    body.top_k = None;
                }
                Err(PostError::Rejected(msg)) if body.n > 1 => {
                    // fall back to sequential single-sample requests
                    log::warn!("endpoint rejected n={} ({msg}); falling back to n=1", body.n);
                    body.n = 1;
                    let mut acc = Vec::with_capacity(req.n_samples);
                    for _ in 0..req.n_samples {
                        let got = self.post_with_retries(&body).map_err(post_to_llm)?;
                        acc.extend(got);
                    }
                    break acc;
                }
                Err(other) => return Err(post_to_llm(other)),
            }
        };

        if completions.len() > req.n_samples {
            completions.truncate(req.n_samples);
        }
        if completions.len() != req.n_samples {
            return Err(LlmError::MalformedPayload(format!(
                "endpoint returned {} completions for n={}",
                completions.len(),
                req.n_samples
            )));
        }
        Ok(ChatResponse {
            completions,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_id: format!("http:{}", self.config.model),
        })
    }

    fn id(&self) -> &str {
        "http"
    }
}

fn post_to_llm(err: PostError) -> LlmError {
    match err {
        PostError::Transient(message) => LlmError::Transport { attempts: 1, message },
        PostError::Rejected(message) => LlmError::Transport { attempts: 1, message },
        PostError::Malformed(message) => LlmError::MalformedPayload(message),
        PostError::Exhausted(attempts, message) => LlmError::Transport { attempts, message },
    }
}
