//! Stage drivers and the composite run: ingest → build-variations →
//! export-sft → generate → score → critique → report, all file-backed
//! under one output directory.
//!
//! Every stage is independently re-runnable and resumes idempotently:
//! outputs are keyed by triplet id, existing complete records are reused,
//! records that carry an error marker are retried, and the final file is
//! rewritten atomically in split order — so an interrupted run, resumed,
//! produces byte-identical artifacts to an uninterrupted one (for
//! deterministic backends). Progress is flushed every few items, which
//! bounds how much work a kill can lose.
//!
//! Layout under the output directory:
//!
//! ```text
//! variations/<name>.jsonl               dataset-variation manifest
//! sft/<name>.jsonl                      prompt/completion training pairs
//! runs/<variation>/<model>/             one run directory per pair:
//!   config.json                           resolved config + digest
//!   generations.jsonl                     id, model, generated, …
//!   scores.jsonl                          id + metric scores
//!   critique.jsonl                        id + judge scores + goodness
//!   report.md / report.csv / plotdata.csv rendered results
//!   audit-generation.jsonl                redacted remote traffic (opt-in)
//!   audit-judge.jsonl
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, ConfigError, EmbeddingConfig, JudgeBackendConfig, RunConfig};
use crate::corpus::{self, Corpus, CorpusError, CorpusStats, Triplet};
use crate::critique::{
    derive_goodness, run_critique, to_records, AspectSets, CritiqueError, CritiqueInput,
    CritiqueOutcome, CritiqueRecord, CritiqueScores, MockJudgeBackend,
};
use crate::inference::{
    run_generation, AspectMatchBackend, Backend, GenerationError, GenerationRecord, LeadKBackend,
    RandomSentencesBackend, RemoteChatBackend,
};
use crate::jsonl::{self, JsonlError};
use crate::metrics::embedding::{EmbeddingProvider, HashEmbedding, HttpEmbedding};
use crate::metrics::{score_all, MetricError, MetricScores};
use crate::prompts::{self, PromptError};
use crate::report::{
    aggregate, compare_models, render_table, write_plotdata, EvalReport, GroupBy, MetricRow,
    ReportContext, ReportError, TableFormat,
};
use crate::variations::{
    build_variation, default_domain_map, reconstruct, write_manifest, DatasetVariation,
    SelectionRule, VariationError,
};

/// How many freshly computed items are accumulated before progress is
/// persisted. Small enough that a kill loses little work; large enough to
/// keep parallel workers busy between flushes.
const FLUSH_EVERY: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Critique(#[from] CritiqueError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("unknown variation \"{name}\" (configured: {known})")]
    UnknownVariation { name: String, known: String },
    #[error("{path} is missing records for ids: {ids} — run the earlier stage first")]
    MissingRecords { path: String, ids: String },
    #[error("{path} contains records for ids outside this split (wrong variation or corpus?): {ids}")]
    StaleRecords { path: String, ids: String },
    #[error("backend initialization failed: {0}")]
    BackendInit(String),
}

impl PipelineError {
    /// Process exit code class: 1 usage/config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::UnknownVariation { .. } => 1,
            PipelineError::Generation(GenerationError::BadParams(_))
            | PipelineError::Generation(GenerationError::BadParallelism)
            | PipelineError::Critique(CritiqueError::BadSettings(_))
            | PipelineError::Critique(CritiqueError::BadParallelism) => 1,
            PipelineError::Generation(GenerationError::Backend { .. })
            | PipelineError::Critique(CritiqueError::Failed { .. })
            | PipelineError::Metric(MetricError::Provider(_))
            | PipelineError::BackendInit(_) => 3,
            _ => 2,
        }
    }
}

/// Directory-safe version of a model name: lowercased, with every run of
/// characters outside `[a-z0-9._]` collapsed to a single `-`.
pub fn model_slug(name: &str) -> String {
    let mut slug = String::with_capacity(name.len());
    for c in name.to_lowercase().chars() {
        let mapped = if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
            c
        } else {
            '-'
        };
        if mapped == '-' && slug.ends_with('-') {
            continue;
        }
        slug.push(mapped);
    }
    let trimmed = slug.trim_matches('-');
    if trimmed.is_empty() {
        "model".to_string()
    } else {
        trimmed.to_string()
    }
}

/// Resolves every artifact path under one output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    out_dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn manifest(&self, variation: &str) -> PathBuf {
        self.out_dir.join("variations").join(format!("{variation}.jsonl"))
    }

    pub fn sft(&self, variation: &str) -> PathBuf {
        self.out_dir.join("sft").join(format!("{variation}.jsonl"))
    }

    pub fn run_dir(&self, variation: &str, model: &str) -> PathBuf {
        self.out_dir.join("runs").join(variation).join(model)
    }

    pub fn config_json(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("config.json")
    }

    pub fn generations(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("generations.jsonl")
    }

    pub fn scores(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("scores.jsonl")
    }

    pub fn critique(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("critique.jsonl")
    }

    pub fn report_md(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("report.md")
    }

    pub fn report_csv(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("report.csv")
    }

    pub fn plotdata(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("plotdata.csv")
    }

    pub fn comparison(&self, variation: &str, model: &str) -> PathBuf {
        self.run_dir(variation, model).join("comparison.md")
    }

    pub fn audit(&self, variation: &str, model: &str, stage: &str) -> PathBuf {
        self.run_dir(variation, model).join(format!("audit-{stage}.jsonl"))
    }
}

fn summarize_ids<S: AsRef<str>>(ids: &[S]) -> String {
    const MAX: usize = 10;
    let shown: Vec<&str> = ids.iter().take(MAX).map(|s| s.as_ref()).collect();
    if ids.len() <= MAX {
        shown.join(", ")
    } else {
        format!("{}, … and {} more", shown.join(", "), ids.len() - MAX)
    }
}

/// Builds the generation backend declared in config. Remote backends read
/// their key from the environment and write a redacted audit log into the
/// run directory when enabled.
pub fn build_backend(
    config: &RunConfig,
    paths: &RunPaths,
    variation: &str,
) -> Result<Box<dyn Backend>, PipelineError> {
    let slug = model_slug(&config.generation.resolved_model_name()?);
    match &config.generation.resolved(config.seed).backend {
        BackendConfig::LeadK { k } => Ok(Box::new(LeadKBackend::new(*k))),
        BackendConfig::AspectMatch => Ok(Box::new(AspectMatchBackend)),
        BackendConfig::RandomSentences { k, seed } => Ok(Box::new(RandomSentencesBackend::new(
            *k,
            seed.expect("resolved() fills the seed"),
        ))),
        BackendConfig::Remote { base_url, audit } => {
            let audit_path = audit.then(|| paths.audit(variation, &slug, "generation"));
            let backend = RemoteChatBackend::from_env(base_url, audit_path.as_deref())
                .map_err(|e| PipelineError::BackendInit(e.to_string()))?;
            Ok(Box::new(backend))
        }
    }
}

/// Builds the judge backend declared in config.
pub fn build_judge(
    config: &RunConfig,
    paths: &RunPaths,
    variation: &str,
) -> Result<Box<dyn Backend>, PipelineError> {
    let slug = model_slug(&config.generation.resolved_model_name()?);
    match &config.judge.backend {
        JudgeBackendConfig::Mock => Ok(Box::new(MockJudgeBackend)),
        JudgeBackendConfig::Remote { base_url, audit } => {
            let audit_path = audit.then(|| paths.audit(variation, &slug, "judge"));
            let backend = RemoteChatBackend::from_env(base_url, audit_path.as_deref())
                .map_err(|e| PipelineError::BackendInit(e.to_string()))?;
            Ok(Box::new(backend))
        }
    }
}

/// Builds the embedding provider declared in config (the remote provider
/// probes the service's capabilities here).
pub fn build_embedding(
    config: &EmbeddingConfig,
) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
    match config {
        EmbeddingConfig::Hash { dim } => Ok(Box::new(HashEmbedding::new(*dim))),
        EmbeddingConfig::Http { base_url } => {
            let provider = HttpEmbedding::new(base_url)
                .map_err(|e| PipelineError::Metric(MetricError::Provider(e)))?;
            Ok(Box::new(provider))
        }
    }
}

/// Persists the resolved config and its digest into the run directory so
/// every run directory is self-describing.
pub fn persist_config(
    config: &RunConfig,
    paths: &RunPaths,
    variation: &str,
) -> Result<(), PipelineError> {
    let slug = model_slug(&config.generation.resolved_model_name()?);
    let body = serde_json::json!({
        "version": crate::VERSION,
        "digest": config.digest(),
        "config": config,
    });
    let text = format!(
        "{}\n",
        serde_json::to_string_pretty(&body).expect("config serializes")
    );
    jsonl::write_text(&paths.config_json(variation, &slug), &text)?;
    Ok(())
}

/// Result of normalizing an external corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub stats: CorpusStats,
    pub written: usize,
    pub skipped: usize,
}

/// Validates and normalizes an external JSONL corpus into the interchange
/// format. `rename` maps source keys to interchange keys before parsing
/// (`--map src=dst`). Strict mode fails on the first bad line with its
/// line number; lenient mode skips and counts bad lines. Duplicate ids are
/// a hard error in both modes.
pub fn ingest_corpus(
    input: &Path,
    output: &Path,
    lenient: bool,
    rename: &BTreeMap<String, String>,
) -> Result<IngestOutcome, PipelineError> {
    let path_str = input.display().to_string();
    let text = std::fs::read_to_string(input).map_err(|source| {
        PipelineError::Corpus(CorpusError::Io {
            path: path_str.clone(),
            source,
        })
    })?;

    let mut triplets: Vec<Triplet> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut skipped = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| {
            PipelineError::Corpus(CorpusError::MalformedLine {
                path: path_str.clone(),
                line: line_no,
                message,
            })
        };
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(value) => value,
            Err(e) if lenient => {
                let _ = e;
                skipped += 1;
                continue;
            }
            Err(e) => return Err(bad(e.to_string())),
        };
        let value = match value {
            serde_json::Value::Object(mut map) => {
                for (src, dst) in rename {
                    if let Some(v) = map.remove(src) {
                        map.insert(dst.clone(), v);
                    }
                }
                serde_json::Value::Object(map)
            }
            other if lenient => {
                let _ = other;
                skipped += 1;
                continue;
            }
            other => return Err(bad(format!("expected a JSON object, got {other}"))),
        };
        let triplet: Triplet = match serde_json::from_value(value) {
            Ok(t) => t,
            Err(e) if lenient => {
                let _ = e;
                skipped += 1;
                continue;
            }
            Err(e) => return Err(bad(e.to_string())),
        };
        if let Err(field) = triplet.validate() {
            if lenient {
                skipped += 1;
                continue;
            }
            return Err(PipelineError::Corpus(CorpusError::MissingField {
                path: path_str.clone(),
                line: line_no,
                field: field.to_string(),
            }));
        }
        if let Some(&first_line) = seen.get(&triplet.id) {
            return Err(PipelineError::Corpus(CorpusError::DuplicateId {
                path: path_str.clone(),
                line: line_no,
                first_line,
                id: triplet.id.clone(),
            }));
        }
        seen.insert(triplet.id.clone(), line_no);
        triplets.push(triplet);
    }

    let corpus = Corpus {
        triplets,
        source_path: Some(path_str),
    };
    corpus::save_corpus(&corpus, output)?;
    Ok(IngestOutcome {
        stats: corpus::corpus_stats(&corpus),
        written: corpus.len(),
        skipped,
    })
}

/// Reuses the persisted manifest when present (membership is then frozen,
/// regardless of config edits — delete the manifest to rebuild), otherwise
/// builds the variation and persists its manifest.
pub fn load_or_build_variation(
    config: &RunConfig,
    corpus: &Corpus,
    name: &str,
    paths: &RunPaths,
) -> Result<DatasetVariation, PipelineError> {
    let Some(variation_config) = config.variation(name) else {
        let known: Vec<&str> = config.variations.iter().map(|v| v.name.as_str()).collect();
        return Err(PipelineError::UnknownVariation {
            name: name.to_string(),
            known: if known.is_empty() {
                "none".to_string()
            } else {
                known.join(", ")
            },
        });
    };
    let manifest = paths.manifest(name);
    if manifest.exists() {
        Ok(reconstruct(corpus, &manifest)?)
    } else {
        let built = build_variation(corpus, &variation_config.resolve(config.seed))?;
        write_manifest(&built, &manifest)?;
        Ok(built)
    }
}

/// Builds (or rebuilds, overwriting manifests) every configured variation.
pub fn rebuild_variations(
    config: &RunConfig,
    corpus: &Corpus,
    paths: &RunPaths,
) -> Result<Vec<DatasetVariation>, PipelineError> {
    let mut built = Vec::with_capacity(config.variations.len());
    for spec in config.resolved_variations() {
        let variation = build_variation(corpus, &spec)?;
        write_manifest(&variation, &paths.manifest(&spec.name))?;
        built.push(variation);
    }
    Ok(built)
}

/// Exports the variation's train split as prompt/completion pairs.
pub fn stage_export_sft(
    variation: &DatasetVariation,
    paths: &RunPaths,
) -> Result<(usize, PathBuf), PipelineError> {
    let path = paths.sft(&variation.name);
    let count = prompts::export_sft(variation, &path)?;
    Ok((count, path))
}

fn in_split_order<T: Clone>(
    split: &[Triplet],
    by_id: &BTreeMap<String, T>,
) -> Vec<T> {
    split
        .iter()
        .filter_map(|t| by_id.get(&t.id).cloned())
        .collect()
}

fn check_stale<T>(
    path: &Path,
    by_id: &BTreeMap<String, T>,
    test_ids: &BTreeSet<&str>,
) -> Result<(), PipelineError> {
    let stale: Vec<&String> = by_id.keys().filter(|id| !test_ids.contains(id.as_str())).collect();
    if stale.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::StaleRecords {
            path: path.display().to_string(),
            ids: summarize_ids(&stale),
        })
    }
}

/// Generates candidate summaries for the variation's test split. Existing
/// records are reused by id; records carrying an error marker are retried;
/// per-item failures become error-marked records rather than aborting.
/// Returns the records (in split order, as persisted) and how many still
/// carry an error marker.
pub fn stage_generate(
    config: &RunConfig,
    backend: &dyn Backend,
    variation: &DatasetVariation,
    paths: &RunPaths,
) -> Result<(Vec<GenerationRecord>, usize), PipelineError> {
    let params = config.generation.params()?;
    let slug = model_slug(&params.model_name);
    let path = paths.generations(&variation.name, &slug);
    let test_ids: BTreeSet<&str> = variation.test.iter().map(|t| t.id.as_str()).collect();

    let mut by_id: BTreeMap<String, GenerationRecord> = BTreeMap::new();
    if path.exists() {
        let (cached, _torn) = jsonl::read_lines_tolerant::<GenerationRecord>(&path)?;
        let cached: BTreeMap<String, GenerationRecord> = cached
            .into_iter()
            .map(|r| (r.triplet_id.clone(), r))
            .collect();
        check_stale(&path, &cached, &test_ids)?;
        by_id.extend(cached.into_iter().filter(|(_, r)| r.error.is_none()));
    }

    let missing: Vec<Triplet> = variation
        .test
        .iter()
        .filter(|t| !by_id.contains_key(&t.id))
        .cloned()
        .collect();
    let limiter = config.rate_limit.limiter();
    for chunk in missing.chunks(FLUSH_EVERY) {
        let records = run_generation(backend, chunk, &params, config.parallelism, false, &limiter)?;
        for record in records {
            by_id.insert(record.triplet_id.clone(), record);
        }
        jsonl::write_lines(&path, &in_split_order(&variation.test, &by_id))?;
    }

    let records: Vec<GenerationRecord> = variation
        .test
        .iter()
        .map(|t| by_id.get(&t.id).expect("every test id generated or cached").clone())
        .collect();
    jsonl::write_lines(&path, &records)?;
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    Ok((records, failures))
}

/// One triplet's metric scores, as persisted in `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    #[serde(flatten)]
    pub scores: MetricScores,
}

fn read_generations(
    path: &Path,
    test: &[Triplet],
) -> Result<BTreeMap<String, GenerationRecord>, PipelineError> {
    let test_ids: BTreeSet<&str> = test.iter().map(|t| t.id.as_str()).collect();
    if !path.exists() {
        return Err(PipelineError::MissingRecords {
            path: path.display().to_string(),
            ids: summarize_ids(&test_ids.iter().collect::<Vec<_>>()),
        });
    }
    let (records, _torn) = jsonl::read_lines_tolerant::<GenerationRecord>(path)?;
    let by_id: BTreeMap<String, GenerationRecord> = records
        .into_iter()
        .map(|r| (r.triplet_id.clone(), r))
        .collect();
    check_stale(path, &by_id, &test_ids)?;
    let missing: Vec<&str> = test
        .iter()
        .map(|t| t.id.as_str())
        .filter(|id| !by_id.contains_key(*id))
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingRecords {
            path: path.display().to_string(),
            ids: summarize_ids(&missing),
        });
    }
    Ok(by_id)
}

/// Scores every generated summary against its reference with the full
/// metric suite. Failed generations (empty text) score zero across the
/// board rather than being dropped, so metric means reflect failures.
pub fn stage_score(
    config: &RunConfig,
    variation: &DatasetVariation,
    paths: &RunPaths,
) -> Result<Vec<ScoreRecord>, PipelineError> {
    let slug = model_slug(&config.generation.resolved_model_name()?);
    let generations = read_generations(&paths.generations(&variation.name, &slug), &variation.test)?;
    let path = paths.scores(&variation.name, &slug);
    let test_ids: BTreeSet<&str> = variation.test.iter().map(|t| t.id.as_str()).collect();

    let mut by_id: BTreeMap<String, ScoreRecord> = BTreeMap::new();
    if path.exists() {
        let (cached, _torn) = jsonl::read_lines_tolerant::<ScoreRecord>(&path)?;
        let cached: BTreeMap<String, ScoreRecord> =
            cached.into_iter().map(|r| (r.id.clone(), r)).collect();
        check_stale(&path, &cached, &test_ids)?;
        by_id.extend(cached);
    }

    let provider = build_embedding(&config.embedding)?;
    let missing: Vec<&Triplet> = variation
        .test
        .iter()
        .filter(|t| !by_id.contains_key(&t.id))
        .collect();
    for chunk in missing.chunks(FLUSH_EVERY) {
        for triplet in chunk {
            let generated = &generations
                .get(&triplet.id)
                .expect("completeness checked")
                .generated;
            let scores = score_all(generated, &triplet.summary, provider.as_ref())?;
            by_id.insert(
                triplet.id.clone(),
                ScoreRecord {
                    id: triplet.id.clone(),
                    scores,
                },
            );
        }
        jsonl::write_lines(&path, &in_split_order(&variation.test, &by_id))?;
    }

    let records: Vec<ScoreRecord> = variation
        .test
        .iter()
        .map(|t| by_id.get(&t.id).expect("every test id scored").clone())
        .collect();
    jsonl::write_lines(&path, &records)?;
    Ok(records)
}

fn domain_map_for(variation: &DatasetVariation) -> BTreeMap<String, Vec<String>> {
    match &variation.spec.rule {
        SelectionRule::DomainWise {
            domain_map: Some(map),
        } => map.clone(),
        _ => default_domain_map(),
    }
}

fn cached_outcome(record: &CritiqueRecord) -> Option<CritiqueOutcome> {
    match (record.re, record.cv, record.im, record.ra, &record.error) {
        (Some(re), Some(cv), Some(im), Some(ra), None) => Some(CritiqueOutcome {
            id: record.id.clone(),
            scores: Some(CritiqueScores {
                relevance: re,
                coverage: cv,
                impurity: im,
                rating: ra,
                goodness: None,
            }),
            raw_reply_digest: record.raw_reply_digest.clone(),
            error: None,
        }),
        _ => None,
    }
}

/// Critiques every generated summary with the judge. Cached complete rows
/// are reused; rows with error markers (and items whose critique failed)
/// are retried on the next run. Goodness is re-derived over the full set
/// on every run, so manual labels and the threshold apply uniformly.
/// Returns the persisted records and how many items remain unscored.
pub fn stage_critique(
    config: &RunConfig,
    judge: &dyn Backend,
    variation: &DatasetVariation,
    paths: &RunPaths,
    manual: Option<&BTreeMap<String, bool>>,
) -> Result<(Vec<CritiqueRecord>, usize), PipelineError> {
    let settings = config.judge.settings()?;
    let slug = model_slug(&config.generation.resolved_model_name()?);
    let generations = read_generations(&paths.generations(&variation.name, &slug), &variation.test)?;
    let path = paths.critique(&variation.name, &slug);
    let test_ids: BTreeSet<&str> = variation.test.iter().map(|t| t.id.as_str()).collect();

    let mut outcomes_by_id: BTreeMap<String, CritiqueOutcome> = BTreeMap::new();
    if path.exists() {
        let (cached, _torn) = jsonl::read_lines_tolerant::<CritiqueRecord>(&path)?;
        let cached_map: BTreeMap<String, CritiqueRecord> =
            cached.into_iter().map(|r| (r.id.clone(), r)).collect();
        check_stale(&path, &cached_map, &test_ids)?;
        for record in cached_map.values() {
            if let Some(outcome) = cached_outcome(record) {
                outcomes_by_id.insert(outcome.id.clone(), outcome);
            }
        }
    }

    let missing: Vec<CritiqueInput> = variation
        .test
        .iter()
        .filter(|t| !outcomes_by_id.contains_key(&t.id))
        .map(|t| CritiqueInput {
            triplet: t.clone(),
            generated: generations
                .get(&t.id)
                .expect("completeness checked")
                .generated
                .clone(),
        })
        .collect();
    let aspect_sets = AspectSets::from_items(variation.test.iter(), domain_map_for(variation));
    let limiter = config.rate_limit.limiter();
    for chunk in missing.chunks(FLUSH_EVERY) {
        let fresh = run_critique(
            judge,
            &settings,
            chunk,
            &aspect_sets,
            config.parallelism,
            false,
            &limiter,
        )?;
        for outcome in fresh {
            outcomes_by_id.insert(outcome.id.clone(), outcome);
        }
        // Intermediate flushes persist scores without goodness; the final
        // write below derives goodness over the complete set.
        let partial = in_split_order(&variation.test, &outcomes_by_id);
        jsonl::write_lines(&path, &to_records(&partial))?;
    }

    let mut outcomes: Vec<CritiqueOutcome> = variation
        .test
        .iter()
        .map(|t| {
            outcomes_by_id
                .get(&t.id)
                .expect("every test id critiqued or marked")
                .clone()
        })
        .collect();
    derive_goodness(&mut outcomes, manual, settings.goodness_threshold)?;
    let records = to_records(&outcomes);
    jsonl::write_lines(&path, &records)?;
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    Ok((records, failures))
}

fn synthesized_marker(id: &str) -> CritiqueRecord {
    CritiqueRecord {
        id: id.to_string(),
        re: None,
        cv: None,
        im: None,
        ra: None,
        gd: None,
        gd_source: None,
        raw_reply_digest: None,
        error: Some("critique not run".to_string()),
    }
}

/// Aggregates persisted scores (and critique rows when present) into the
/// report files. Items without a critique row get a synthesized marker, so
/// a run without the critique stage still reports its metric columns.
pub fn stage_report(
    config: &RunConfig,
    variation: &DatasetVariation,
    paths: &RunPaths,
    group_by: GroupBy,
) -> Result<Vec<EvalReport>, PipelineError> {
    let model_name = config.generation.resolved_model_name()?;
    let slug = model_slug(&model_name);
    let test_ids: BTreeSet<&str> = variation.test.iter().map(|t| t.id.as_str()).collect();

    let scores_path = paths.scores(&variation.name, &slug);
    if !scores_path.exists() {
        return Err(PipelineError::MissingRecords {
            path: scores_path.display().to_string(),
            ids: summarize_ids(&test_ids.iter().collect::<Vec<_>>()),
        });
    }
    let score_records: Vec<ScoreRecord> = jsonl::read_lines(&scores_path)?;
    let scores_by_id: BTreeMap<String, ScoreRecord> = score_records
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    check_stale(&scores_path, &scores_by_id, &test_ids)?;
    let unscored: Vec<&str> = variation
        .test
        .iter()
        .map(|t| t.id.as_str())
        .filter(|id| !scores_by_id.contains_key(*id))
        .collect();
    if !unscored.is_empty() {
        return Err(PipelineError::MissingRecords {
            path: scores_path.display().to_string(),
            ids: summarize_ids(&unscored),
        });
    }

    let critique_path = paths.critique(&variation.name, &slug);
    let critique_by_id: BTreeMap<String, CritiqueRecord> = if critique_path.exists() {
        let records: Vec<CritiqueRecord> = jsonl::read_lines(&critique_path)?;
        let map: BTreeMap<String, CritiqueRecord> =
            records.into_iter().map(|r| (r.id.clone(), r)).collect();
        check_stale(&critique_path, &map, &test_ids)?;
        map
    } else {
        BTreeMap::new()
    };
    let critique_records: Vec<CritiqueRecord> = variation
        .test
        .iter()
        .map(|t| {
            critique_by_id
                .get(&t.id)
                .cloned()
                .unwrap_or_else(|| synthesized_marker(&t.id))
        })
        .collect();

    let metric_rows: Vec<MetricRow> = variation
        .test
        .iter()
        .map(|t| MetricRow {
            id: t.id.clone(),
            domain: t.domain.clone(),
            aspect: t.aspect.clone(),
            scores: scores_by_id[&t.id].scores,
        })
        .collect();

    let ctx = ReportContext {
        model_name,
        variation_name: variation.name.clone(),
        config_digest: config.digest(),
    };
    let reports = aggregate(&ctx, &metric_rows, &critique_records, group_by)?;
    jsonl::write_text(
        &paths.report_md(&variation.name, &slug),
        &render_table(&reports, TableFormat::Markdown)?,
    )?;
    jsonl::write_text(
        &paths.report_csv(&variation.name, &slug),
        &render_table(&reports, TableFormat::Csv)?,
    )?;
    jsonl::write_text(
        &paths.plotdata(&variation.name, &slug),
        &write_plotdata(&reports)?,
    )?;
    Ok(reports)
}

/// Renders a comparison of this run's reports against a baseline model's
/// persisted reports is out of scope here; this compares whatever reports
/// the caller aggregated. Kept thin so the CLI can feed it reports from
/// several run directories.
pub fn write_comparison(
    reports: &[EvalReport],
    baseline: &str,
    path: &Path,
) -> Result<(), PipelineError> {
    jsonl::write_text(path, &compare_models(reports, baseline)?)?;
    Ok(())
}

/// What a composite run did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub variation: String,
    pub model_name: String,
    pub n_test_items: usize,
    pub generation_failures: usize,
    pub critique_failures: usize,
    pub report_md: PathBuf,
}

/// The composite run: variation (build or reuse) → generate → score →
/// critique → report, everything persisted under the run directory.
/// Completed items are skipped by id on resume. Failures are lenient —
/// counted in the summary, not fatal — so one flaky item cannot kill a
/// long run; resume retries the failed items.
pub fn run_all(
    config: &RunConfig,
    variation_name: &str,
    group_by: GroupBy,
    manual: Option<&BTreeMap<String, bool>>,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let corpus = corpus::load_corpus(&config.corpus)?;
    let paths = RunPaths::new(&config.out_dir);
    let variation = load_or_build_variation(config, &corpus, variation_name, &paths)?;
    persist_config(config, &paths, variation_name)?;

    let backend = build_backend(config, &paths, variation_name)?;
    let (_, generation_failures) = stage_generate(config, backend.as_ref(), &variation, &paths)?;
    stage_score(config, &variation, &paths)?;
    let judge = build_judge(config, &paths, variation_name)?;
    let (_, critique_failures) =
        stage_critique(config, judge.as_ref(), &variation, &paths, manual)?;
    stage_report(config, &variation, &paths, group_by)?;

    let slug = model_slug(&config.generation.resolved_model_name()?);
    Ok(RunSummary {
        variation: variation.name.clone(),
        model_name: config.generation.resolved_model_name()?,
        n_test_items: variation.test.len(),
        generation_failures,
        critique_failures,
        report_md: paths.report_md(&variation.name, &slug),
    })
}
