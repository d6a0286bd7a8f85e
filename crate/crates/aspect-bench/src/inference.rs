//! Candidate-summary generation: pluggable backends, bounded-parallelism
//! batch driving, retry with exponential backoff, and rate limiting.
//!
//! Three deterministic local baselines (lead-k, aspect-match,
//! random-sentences) make the whole pipeline runnable offline; the remote
//! backend speaks the de-facto chat-completions wire shape so hosted models
//! plug in unchanged. Batch output order always equals input order, and
//! deterministic backends record a normalized latency of 0 so reruns are
//! byte-identical.

use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::Triplet;
use crate::metrics::tokenize;
use crate::prompts::{render_inference, PromptError, RenderedPrompt};
use crate::{jsonl, rng};

/// Delay before the first transient-failure retry; doubles per attempt.
const BACKOFF_BASE: Duration = Duration::from_millis(250);

/// Environment variable holding the API key for remote backends. The key
/// is read from the environment only — configuration files never carry it.
pub const API_KEY_ENV: &str = "ASPECT_BENCH_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: 5xx, 429, timeouts, connection failures.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Retrying cannot help: 4xx, malformed replies, bad prompts.
    #[error("permanent backend failure: {0}")]
    Permanent(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid generation params: {0}")]
    BadParams(String),
    #[error("parallelism must be at least 1")]
    BadParallelism,
    #[error("prompt rendering failed for \"{id}\": {source}")]
    Prompt {
        id: String,
        #[source]
        source: PromptError,
    },
    #[error("generation failed for \"{id}\": {source}")]
    Backend {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Io(#[from] jsonl::JsonlError),
}

/// Decoding and transport parameters for one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    /// Upper bound on generated tokens (default 80).
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    /// Sampling temperature (default 0.0 — greedy).
    #[serde(default)]
    pub temperature: f64,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Transient-failure retries per item (total attempts = 1 + retries).
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_max_new_tokens() -> usize {
    80
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_max_retries() -> u32 {
    3
}

impl GenerationParams {
    /// Defaults (80 new tokens, temperature 0.0) under the given model name.
    pub fn named(model_name: &str) -> Self {
        Self {
            model_name: model_name.to_string(),
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.model_name.trim().is_empty() {
            return Err(GenerationError::BadParams("model_name is empty".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(GenerationError::BadParams(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(GenerationError::BadParams(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A text-completion source. Thread-safe: the batch driver shares one
/// backend across workers.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<String, BackendError>;

    /// True when identical inputs are guaranteed identical outputs; batch
    /// records then normalize latency to 0 for reproducibility.
    fn deterministic(&self) -> bool;
}

/// One generation outcome. Serialized as line-delimited records with keys
/// `id`, `model`, `generated`, `latency_ms`, `attempts` (plus `warning` /
/// `error` when set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    #[serde(rename = "id")]
    pub triplet_id: String,
    #[serde(rename = "model")]
    pub model_name: String,
    pub generated: String,
    /// Wall-clock milliseconds; 0 for deterministic backends so reruns are
    /// byte-identical.
    pub latency_ms: u64,
    #[serde(rename = "attempts")]
    pub attempt_count: u32,
    /// Non-fatal flag, e.g. an empty generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Failure description when the item failed in lenient mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Splits text into sentences: maximal spans ending in `.`, `!`, or `?`
/// (consecutive terminators stay with their sentence); a trailing span
/// without a terminator counts as a final sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            while let Some(&next) = chars.peek() {
                if matches!(next, '.' | '!' | '?') {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            let s = current.trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

const DOCUMENT_MARKER: &str = "\n### Document: ";
const ASPECT_PREFIX: &str =
    "Summarize the textual document given below from the perspective of ";

/// Pulls the document text back out of a rendered generation prompt.
fn extract_document(user: &str) -> Result<&str, BackendError> {
    user.split_once(DOCUMENT_MARKER)
        .map(|(_, doc)| doc)
        .ok_or_else(|| {
            BackendError::Permanent(format!(
                "prompt is missing the \"{}\" marker",
                DOCUMENT_MARKER.trim()
            ))
        })
}

/// Pulls the aspect back out of a rendered generation prompt.
fn extract_aspect(user: &str) -> Result<&str, BackendError> {
    let (head, _) = user.split_once(DOCUMENT_MARKER).ok_or_else(|| {
        BackendError::Permanent(format!(
            "prompt is missing the \"{}\" marker",
            DOCUMENT_MARKER.trim()
        ))
    })?;
    head.strip_prefix(ASPECT_PREFIX)
        .and_then(|rest| rest.strip_suffix(':'))
        .ok_or_else(|| {
            BackendError::Permanent("prompt head does not match the generation template".into())
        })
}

/// Extractive baseline: the first `k` sentences of the document.
pub struct LeadKBackend {
    k: usize,
}

impl LeadKBackend {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "lead-k requires k >= 1");
        Self { k }
    }
}

impl Backend for LeadKBackend {
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        _params: &GenerationParams,
    ) -> Result<String, BackendError> {
        let document = extract_document(&prompt.user)?;
        let sentences = split_sentences(document);
        Ok(sentences[..self.k.min(sentences.len())].join(" "))
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Oracle-ish extractive baseline: every document sentence sharing at least
/// one token with the aspect, in document order; falls back to the first
/// sentence when nothing matches.
pub struct AspectMatchBackend;

impl Backend for AspectMatchBackend {
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        _params: &GenerationParams,
    ) -> Result<String, BackendError> {
        let document = extract_document(&prompt.user)?;
        let aspect = extract_aspect(&prompt.user)?;
        let aspect_tokens = tokenize(aspect);
        let sentences = split_sentences(document);
        let matching: Vec<&String> = sentences
            .iter()
            .filter(|s| {
                let toks = tokenize(s);
                aspect_tokens.iter().any(|a| toks.contains(a))
            })
            .collect();
        if matching.is_empty() {
            Ok(sentences.first().cloned().unwrap_or_default())
        } else {
            Ok(matching
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(" "))
        }
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Noise baseline: `k` distinct sentences drawn uniformly from the
/// document, emitted in document order. The draw is seeded from the seed
/// plus a hash of the prompt text, so each prompt gets its own stable
/// sample no matter how the batch is ordered or parallelized.
pub struct RandomSentencesBackend {
    k: usize,
    seed: u64,
}

impl RandomSentencesBackend {
    pub fn new(k: usize, seed: u64) -> Self {
        assert!(k >= 1, "random-sentences requires k >= 1");
        Self { k, seed }
    }
}

impl Backend for RandomSentencesBackend {
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        _params: &GenerationParams,
    ) -> Result<String, BackendError> {
        use sha2::{Digest, Sha256};
        let document = extract_document(&prompt.user)?;
        let sentences = split_sentences(document);
        if sentences.is_empty() {
            return Ok(String::new());
        }
        let digest = Sha256::digest(prompt.user.as_bytes());
        let prompt_hash = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = rng::seeded(self.seed ^ prompt_hash, "random-sentences");
        let mut picked = rng::sample_indices(&mut rng, sentences.len(), self.k);
        picked.sort_unstable();
        Ok(picked
            .into_iter()
            .map(|i| sentences[i].as_str())
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Client for a chat-completions endpoint: POSTs `model`, a system+user
/// message list, `temperature`, and `max_tokens` to
/// `{base_url}/chat/completions` and extracts the first choice's message
/// content. 429 and 5xx statuses and transport failures classify as
/// transient; other 4xx as permanent.
///
/// The API key comes from the [`API_KEY_ENV`] environment variable, never
/// from configuration files. Every exchange can be appended to an audit
/// file; the audit record carries the redacted authorization header, never
/// the key itself.
pub struct RemoteChatBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
    audit: Option<Mutex<std::fs::File>>,
    audit_seq: AtomicU64,
}

impl RemoteChatBackend {
    /// Builds a client for `base_url`, reading the API key from the
    /// environment. `audit_path`, when given, receives one JSON line per
    /// HTTP exchange with secrets redacted.
    pub fn from_env(base_url: &str, audit_path: Option<&Path>) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| {
            BackendError::Permanent(format!(
                "remote backend requires the {API_KEY_ENV} environment variable"
            ))
        })?;
        if api_key.trim().is_empty() {
            return Err(BackendError::Permanent(format!(
                "{API_KEY_ENV} is set but empty"
            )));
        }
        let audit = match audit_path {
            Some(p) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| {
                        BackendError::Permanent(format!(
                            "cannot open audit log {}: {e}",
                            p.display()
                        ))
                    })?,
            )),
            None => None,
        };
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::AgentBuilder::new().build(),
            audit,
            audit_seq: AtomicU64::new(1),
        })
    }

    fn audit_exchange(
        &self,
        url: &str,
        request: &serde_json::Value,
        status: Option<u16>,
        response: &str,
    ) {
        let Some(audit) = &self.audit else { return };
        const RESPONSE_CAP: usize = 4096;
        let mut shown = response;
        while shown.len() > RESPONSE_CAP {
            // Trim at a char boundary.
            let cut = shown.char_indices().rev().find(|(i, _)| *i <= RESPONSE_CAP);
            shown = &shown[..cut.map_or(0, |(i, _)| i)];
        }
        let record = serde_json::json!({
            "seq": self.audit_seq.fetch_add(1, Ordering::SeqCst),
            "method": "POST",
            "url": url,
            "authorization": "Bearer [REDACTED]",
            "request": request,
            "status": status,
            "response": shown,
        });
        let mut file = audit.lock().expect("audit lock poisoned");
        let _ = writeln!(file, "{record}");
    }
}

impl Backend for RemoteChatBackend {
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = serde_json::json!({
            "model": params.model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        let result = self
            .agent
            .post(&url)
            .timeout(params.timeout())
            .set("authorization", &format!("Bearer {}", self.api_key))
            .send_json(body.clone());
        match result {
            Ok(response) => {
                let status = response.status();
                let text = response.into_string().map_err(|e| {
                    BackendError::Transient(format!("failed to read response body: {e}"))
                })?;
                self.audit_exchange(&url, &body, Some(status), &text);
                let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
                    BackendError::Permanent(format!("malformed backend response: {e}"))
                })?;
                value["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| {
                        BackendError::Permanent(
                            "malformed backend response: missing choices[0].message.content"
                                .into(),
                        )
                    })
            }
            Err(ureq::Error::Status(code, response)) => {
                let text = response.into_string().unwrap_or_default();
                self.audit_exchange(&url, &body, Some(code), &text);
                let detail: String = text.chars().take(200).collect();
                let message = format!("HTTP {code}: {detail}");
                if code == 429 || code >= 500 {
                    Err(BackendError::Transient(message))
                } else {
                    Err(BackendError::Permanent(message))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                self.audit_exchange(&url, &body, None, &t.to_string());
                Err(BackendError::Transient(format!("transport failure: {t}")))
            }
        }
    }

    fn deterministic(&self) -> bool {
        false
    }
}

/// Token-bucket rate limiter shared across workers. A bucket holds at most
/// one request's worth of burst; `acquire` blocks until the bucket refills.
pub struct RateLimiter {
    /// Refill rate in tokens per second; `None` disables limiting.
    per_second: Option<f64>,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests_per_minute: u32) -> Self {
        assert!(requests_per_minute > 0, "rate must be positive");
        Self {
            per_second: Some(f64::from(requests_per_minute) / 60.0),
            state: Mutex::new((1.0, Instant::now())),
        }
    }

    pub fn unlimited() -> Self {
        Self {
            per_second: None,
            state: Mutex::new((0.0, Instant::now())),
        }
    }

    /// Blocks until a token is available, then consumes it.
    pub fn acquire(&self) {
        let Some(rate) = self.per_second else { return };
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter lock poisoned");
                let (ref mut tokens, ref mut last) = *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * rate).min(1.0);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    None
                } else {
                    Some(Duration::from_secs_f64((1.0 - *tokens) / rate))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }
}

/// Calls the backend, retrying transient failures up to `max_retries`
/// times with exponential backoff. Returns the text and the number of
/// attempts made; errors carry the attempt count too.
pub fn generate(
    backend: &dyn Backend,
    prompt: &RenderedPrompt,
    params: &GenerationParams,
) -> Result<(String, u32), (BackendError, u32)> {
    let mut attempt = 1u32;
    loop {
        match backend.complete(prompt, params) {
            Ok(text) => return Ok((text, attempt)),
            Err(e @ BackendError::Permanent(_)) => return Err((e, attempt)),
            Err(e @ BackendError::Transient(_)) => {
                if attempt > params.max_retries {
                    return Err((e, attempt));
                }
                std::thread::sleep(BACKOFF_BASE * 2u32.pow(attempt - 1));
                attempt += 1;
            }
        }
    }
}

/// Runs items through a shared function on up to `parallelism` threads,
/// returning results in input order. `f` may set the stop flag to prevent
/// further items from starting (in-flight items still finish); stopped
/// slots come back as `None`.
pub(crate) fn parallel_map_ordered<T, R, F>(
    items: &[T],
    parallelism: usize,
    stop: &AtomicBool,
    f: F,
) -> Vec<Option<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..parallelism.clamp(1, n) {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = f(i, &items[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot poisoned"))
        .collect()
}

/// Generates one record per triplet, in split order, on up to
/// `parallelism` workers. In lenient mode (`fail_fast == false`) per-item
/// failures become records with an `error` field; in fail-fast mode the
/// first failure aborts the batch. Empty generations are recorded with a
/// warning, never dropped.
pub fn run_generation(
    backend: &dyn Backend,
    split: &[Triplet],
    params: &GenerationParams,
    parallelism: usize,
    fail_fast: bool,
    limiter: &RateLimiter,
) -> Result<Vec<GenerationRecord>, GenerationError> {
    params.validate()?;
    if parallelism == 0 {
        return Err(GenerationError::BadParallelism);
    }
    let stop = AtomicBool::new(false);
    let normalize_latency = backend.deterministic();

    let outcomes = parallel_map_ordered(split, parallelism, &stop, |_, triplet| {
        let result = process_one(backend, triplet, params, limiter, normalize_latency);
        if fail_fast && result.is_err() {
            stop.store(true, Ordering::SeqCst);
        }
        result
    });

    // Workers claim indices in order, so in index order every slot up to
    // and including the first error is Some; None appears only behind a
    // fail-fast stop, which returns before reaching it.
    let mut records = Vec::with_capacity(split.len());
    for (triplet, outcome) in split.iter().zip(outcomes) {
        match outcome {
            Some(Ok(record)) => records.push(record),
            Some(Err((e, attempts))) => {
                if fail_fast {
                    return Err(e);
                }
                let message = match &e {
                    GenerationError::Backend { source, .. } => source.to_string(),
                    other => other.to_string(),
                };
                records.push(GenerationRecord {
                    triplet_id: triplet.id.clone(),
                    model_name: params.model_name.clone(),
                    generated: String::new(),
                    latency_ms: 0,
                    attempt_count: attempts.max(1),
                    warning: None,
                    error: Some(message),
                });
            }
            None => unreachable!("slots are only skipped after a fail-fast stop"),
        }
    }
    Ok(records)
}

fn process_one(
    backend: &dyn Backend,
    triplet: &Triplet,
    params: &GenerationParams,
    limiter: &RateLimiter,
    normalize_latency: bool,
) -> Result<GenerationRecord, (GenerationError, u32)> {
    let prompt = render_inference(triplet).map_err(|source| {
        (
            GenerationError::Prompt {
                id: triplet.id.clone(),
                source,
            },
            0,
        )
    })?;
    limiter.acquire();
    let started = Instant::now();
    let (generated, attempts) = generate(backend, &prompt, params).map_err(|(source, n)| {
        (
            GenerationError::Backend {
                id: triplet.id.clone(),
                source,
            },
            n,
        )
    })?;
    let latency_ms = if normalize_latency {
        0
    } else {
        started.elapsed().as_millis() as u64
    };
    let warning = if generated.trim().is_empty() {
        Some("empty generation".to_string())
    } else {
        None
    };
    Ok(GenerationRecord {
        triplet_id: triplet.id.clone(),
        model_name: params.model_name.clone(),
        generated,
        latency_ms,
        attempt_count: attempts,
        warning,
        error: None,
    })
}
