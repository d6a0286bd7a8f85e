//! Run configuration: a single TOML file describing the corpus, the
//! dataset variations, the generation backend, the judge, the embedding
//! provider, and run-wide settings (seed, parallelism, rate limit,
//! output directory).
//!
//! Two rules keep runs reproducible and safe:
//!
//! * One global seed. Anything that samples derives its own seed from it
//!   by a fixed label (variations use `variation:<name>`), so adding a
//!   variation or changing parallelism never changes another stage's
//!   sampling.
//! * No secrets. API keys are read from the `ASPECT_BENCH_API_KEY`
//!   environment variable only; a config file that tries to set an
//!   api-key-like key is rejected outright rather than silently ignored.
//!
//! [`RunConfig::digest`] hashes the result-affecting settings (corpus
//! path, seed, variations with resolved seeds, generation, judge,
//! embedding, tool version) — not parallelism, rate limits, or the output
//! directory, which cannot change what a run produces.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critique::{JudgeSettings, DEFAULT_GOODNESS_THRESHOLD};
use crate::inference::{GenerationParams, RateLimiter, API_KEY_ENV};
use crate::rng;
use crate::variations::{SelectionRule, VariationSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(
        "config file sets \"{0}\"; API keys are read from the {} environment variable, \
         never from config files",
        API_KEY_ENV
    )]
    ApiKeyInConfig(String),
    #[error("remote backend requires the {} environment variable", API_KEY_ENV)]
    MissingApiKey,
}

/// A variation spec as written in config: the seed may be omitted, in
/// which case it derives from the global seed by the `variation:<name>`
/// label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    pub name: String,
    #[serde(flatten)]
    pub rule: SelectionRule,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub allow_truncate: bool,
}

impl VariationConfig {
    pub fn resolved_seed(&self, global_seed: u64) -> u64 {
        self.seed
            .unwrap_or_else(|| rng::derive_seed(global_seed, &format!("variation:{}", self.name)))
    }

    pub fn resolve(&self, global_seed: u64) -> VariationSpec {
        VariationSpec {
            name: self.name.clone(),
            rule: self.rule.clone(),
            train_n: self.train_n,
            val_n: self.val_n,
            test_n: self.test_n,
            seed: self.resolved_seed(global_seed),
            allow_truncate: self.allow_truncate,
        }
    }
}

/// Which text generator produces candidate summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum BackendConfig {
    /// First k sentences of the document.
    LeadK {
        #[serde(default = "default_k")]
        k: usize,
    },
    /// Sentences sharing tokens with the aspect.
    AspectMatch,
    /// k seeded-random sentences, in document order.
    RandomSentences {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// OpenAI-style chat-completions service.
    Remote {
        base_url: String,
        /// Write a redacted request/response audit log in the run directory.
        #[serde(default = "default_true")]
        audit: bool,
    },
}

fn default_k() -> usize {
    3
}
fn default_true() -> bool {
    true
}

impl BackendConfig {
    pub fn default_model_name(&self) -> Option<String> {
        match self {
            BackendConfig::LeadK { k } => Some(format!("lead-{k}")),
            BackendConfig::AspectMatch => Some("aspect-match".to_string()),
            BackendConfig::RandomSentences { k, .. } => Some(format!("random-{k}")),
            BackendConfig::Remote { .. } => None,
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendConfig::Remote { .. })
    }
}

/// Generation backend plus its request parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    #[serde(flatten)]
    pub backend: BackendConfig,
    /// Defaults per backend (`lead-3`, `aspect-match`, `random-3`);
    /// required for remote backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
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

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::LeadK { k: default_k() },
            model_name: None,
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }
}

impl GenerationConfig {
    pub fn resolved_model_name(&self) -> Result<String, ConfigError> {
        self.model_name
            .clone()
            .or_else(|| self.backend.default_model_name())
            .ok_or_else(|| {
                ConfigError::Invalid("remote generation backend requires model_name".into())
            })
    }

    pub fn params(&self) -> Result<GenerationParams, ConfigError> {
        let mut params = GenerationParams::named(&self.resolved_model_name()?);
        params.max_new_tokens = self.max_new_tokens;
        params.temperature = self.temperature;
        params.timeout_secs = self.timeout_secs;
        params.max_retries = self.max_retries;
        Ok(params)
    }

    /// The backend seed a run will actually use (random_sentences only).
    pub fn resolved(&self, global_seed: u64) -> Self {
        let mut resolved = self.clone();
        if let BackendConfig::RandomSentences { k, seed } = &self.backend {
            resolved.backend = BackendConfig::RandomSentences {
                k: *k,
                seed: Some(
                    seed.unwrap_or_else(|| rng::derive_seed(global_seed, "backend:random-sentences")),
                ),
            };
        }
        resolved
    }
}

/// Which judge scores generated summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum JudgeBackendConfig {
    /// Deterministic offline judge (token-overlap scores).
    Mock,
    /// OpenAI-style chat-completions service.
    Remote {
        base_url: String,
        #[serde(default = "default_true")]
        audit: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    #[serde(flatten)]
    pub backend: JudgeBackendConfig,
    /// Defaults to `mock-judge` for the mock backend; required for remote.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parse_retries")]
    pub parse_retries: u32,
    #[serde(default = "default_goodness_threshold")]
    pub goodness_threshold: f64,
}

fn default_parse_retries() -> u32 {
    1
}
fn default_goodness_threshold() -> f64 {
    DEFAULT_GOODNESS_THRESHOLD
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            backend: JudgeBackendConfig::Mock,
            model_name: None,
            temperature: 0.0,
            max_new_tokens: default_max_new_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            parse_retries: default_parse_retries(),
            goodness_threshold: default_goodness_threshold(),
        }
    }
}

impl JudgeConfig {
    pub fn resolved_model_name(&self) -> Result<String, ConfigError> {
        match (&self.model_name, &self.backend) {
            (Some(name), _) => Ok(name.clone()),
            (None, JudgeBackendConfig::Mock) => Ok("mock-judge".to_string()),
            (None, JudgeBackendConfig::Remote { .. }) => Err(ConfigError::Invalid(
                "remote judge backend requires model_name".into(),
            )),
        }
    }

    pub fn settings(&self) -> Result<JudgeSettings, ConfigError> {
        let mut params = GenerationParams::named(&self.resolved_model_name()?);
        params.max_new_tokens = self.max_new_tokens;
        params.temperature = self.temperature;
        params.timeout_secs = self.timeout_secs;
        params.max_retries = self.max_retries;
        Ok(JudgeSettings {
            params,
            parse_retries: self.parse_retries,
            goodness_threshold: self.goodness_threshold,
        })
    }

    pub fn is_remote(&self) -> bool {
        matches!(self.backend, JudgeBackendConfig::Remote { .. })
    }
}

/// Which token-embedding provider backs the embedding-similarity metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    /// Deterministic hash-seeded unit vectors (offline).
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Remote embedding service speaking the `/capabilities` + `/embed`
    /// protocol.
    Http { base_url: String },
}

fn default_dim() -> usize {
    64
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash { dim: default_dim() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RateLimitConfig {
    /// 0 disables rate limiting.
    #[serde(default)]
    pub requests_per_minute: u32,
}

impl RateLimitConfig {
    pub fn limiter(&self) -> RateLimiter {
        if self.requests_per_minute > 0 {
            RateLimiter::per_minute(self.requests_per_minute)
        } else {
            RateLimiter::unlimited()
        }
    }
}

fn default_seed() -> u64 {
    42
}
fn default_parallelism() -> usize {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// The whole run description. Every field has a default except the corpus
/// path, so a minimal config is one line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(rename = "variation", default)]
    pub variations: Vec<VariationConfig>,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub rate_limit: RateLimitConfig,
}

fn reject_api_key_keys(value: &toml::Value, path: &str) -> Result<(), ConfigError> {
    if let toml::Value::Table(table) = value {
        for (key, child) in table {
            let lowered = key.to_lowercase().replace(['-', '_'], "");
            if lowered.contains("apikey") || lowered == "key" || lowered.ends_with("secret") {
                let full = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                return Err(ConfigError::ApiKeyInConfig(full));
            }
            let full = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            reject_api_key_keys(child, &full)?;
        }
    }
    if let toml::Value::Array(items) = value {
        for item in items {
            reject_api_key_keys(item, path)?;
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Value = text.parse()?;
        reject_api_key_keys(&raw, "")?;
        Ok(raw.try_into()?)
    }

    /// Loads a config file. Relative `corpus` and `out_dir` paths are
    /// resolved against the file's directory, so a config works the same
    /// from any working directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if config.corpus.is_relative() {
                config.corpus = base.join(&config.corpus);
            }
            if config.out_dir.is_relative() {
                config.out_dir = base.join(&config.out_dir);
            }
        }
        Ok(config)
    }

    /// Applies command-line overrides (flags beat the file).
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        parallelism: Option<usize>,
        out_dir: Option<PathBuf>,
    ) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(parallelism) = parallelism {
            self.parallelism = parallelism;
        }
        if let Some(out_dir) = out_dir {
            self.out_dir = out_dir;
        }
    }

    pub fn resolved_variations(&self) -> Vec<VariationSpec> {
        self.variations
            .iter()
            .map(|v| v.resolve(self.seed))
            .collect()
    }

    pub fn variation(&self, name: &str) -> Option<&VariationConfig> {
        self.variations.iter().find(|v| v.name == name)
    }

    /// Checks everything that can be checked without touching the
    /// filesystem or network — including that the API key environment
    /// variable is set when any remote backend is selected.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |message: String| Err(ConfigError::Invalid(message));
        if self.corpus.as_os_str().is_empty() {
            return invalid("corpus path is empty".into());
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }

        let mut names = BTreeSet::new();
        for variation in &self.variations {
            if variation.name.is_empty() {
                return invalid("variation name is empty".into());
            }
            if !variation
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return invalid(format!(
                    "variation name \"{}\" may only contain letters, digits, '-' and '_' \
                     (it becomes a directory name)",
                    variation.name
                ));
            }
            if !names.insert(variation.name.as_str()) {
                return invalid(format!("duplicate variation name \"{}\"", variation.name));
            }
            if variation.train_n + variation.val_n + variation.test_n == 0 {
                return invalid(format!(
                    "variation \"{}\" requests zero items across all splits",
                    variation.name
                ));
            }
            match &variation.rule {
                SelectionRule::HighFreq {
                    n_aspects,
                    docs_per_aspect,
                } => {
                    if *n_aspects == 0 || *docs_per_aspect == 0 {
                        return invalid(format!(
                            "variation \"{}\": n_aspects and docs_per_aspect must be at least 1",
                            variation.name
                        ));
                    }
                }
                SelectionRule::LowFreq {
                    freq_min,
                    freq_max,
                    n_total,
                } => {
                    if *freq_min == 0 || freq_max < freq_min || *n_total == 0 {
                        return invalid(format!(
                            "variation \"{}\": low_freq needs 1 <= freq_min <= freq_max and n_total >= 1",
                            variation.name
                        ));
                    }
                }
                SelectionRule::Random { n_total } => {
                    if *n_total == 0 {
                        return invalid(format!(
                            "variation \"{}\": n_total must be at least 1",
                            variation.name
                        ));
                    }
                }
                SelectionRule::DomainWise { .. } => {}
            }
        }

        match &self.generation.backend {
            BackendConfig::LeadK { k } | BackendConfig::RandomSentences { k, .. } => {
                if *k == 0 {
                    return invalid("generation k must be at least 1".into());
                }
            }
            BackendConfig::AspectMatch => {}
            BackendConfig::Remote { base_url, .. } => {
                if base_url.trim().is_empty() {
                    return invalid("generation base_url is empty".into());
                }
            }
        }
        self.generation.resolved_model_name()?;
        if !(self.generation.temperature >= 0.0 && self.generation.temperature.is_finite()) {
            return invalid("generation temperature must be finite and >= 0".into());
        }
        if self.generation.max_new_tokens == 0 {
            return invalid("generation max_new_tokens must be at least 1".into());
        }

        if let JudgeBackendConfig::Remote { base_url, .. } = &self.judge.backend {
            if base_url.trim().is_empty() {
                return invalid("judge base_url is empty".into());
            }
        }
        self.judge.resolved_model_name()?;
        if !(self.judge.temperature >= 0.0 && self.judge.temperature.is_finite()) {
            return invalid("judge temperature must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.judge.goodness_threshold) {
            return invalid(format!(
                "judge goodness_threshold must be in [0,1], got {}",
                self.judge.goodness_threshold
            ));
        }

        match &self.embedding {
            EmbeddingConfig::Hash { dim } => {
                if *dim == 0 {
                    return invalid("embedding dim must be at least 1".into());
                }
            }
            EmbeddingConfig::Http { base_url } => {
                if base_url.trim().is_empty() {
                    return invalid("embedding base_url is empty".into());
                }
            }
        }

        if self.generation.backend.is_remote() || self.judge.is_remote() {
            match std::env::var(API_KEY_ENV) {
                Ok(value) if !value.trim().is_empty() => {}
                _ => return Err(ConfigError::MissingApiKey),
            }
        }
        Ok(())
    }

    /// Hash over the result-affecting settings. Two configs with the same
    /// digest produce byte-identical runs (deterministic backends);
    /// parallelism, rate limits, and the output directory are excluded
    /// because they cannot change outputs.
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "version": crate::VERSION,
            "corpus": self.corpus.to_string_lossy(),
            "seed": self.seed,
            "variations": self.resolved_variations(),
            "generation": self.generation.resolved(self.seed),
            "judge": self.judge,
            "embedding": self.embedding,
        });
        crate::critique::sha256_hex(&canonical.to_string())
    }
}
