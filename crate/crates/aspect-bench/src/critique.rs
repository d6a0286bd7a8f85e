//! LLM-as-judge critique: renders the judge prompt, collects replies,
//! parses the four criterion scores, and derives the fifth (goodness)
//! label.
//!
//! The four scored criteria are relevance (`re`), key-point coverage
//! (`cv`), aspect impurity (`im`), and overall rating (`ra`), each in
//! [0, 1]. Goodness (`gd`) is never requested from the judge: it is
//! derived from the rating against a configurable threshold, or imported
//! from a manual-label file which takes precedence.
//!
//! Score parsing is strict about range — an out-of-range value is always
//! an error, never clamped — and forgiving about layout: labeled scores
//! ("Criteria 1: 0.8" or "1. 0.8") are preferred when present; otherwise
//! the first `expected` decimal-pointed literals are taken in reading
//! order. Parse failures retry once (configurable) with a format reminder
//! appended to the prompt.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Triplet;
use crate::inference::{generate, parallel_map_ordered, Backend, BackendError, GenerationParams, RateLimiter};
use crate::prompts::{render_critique, PromptError, RenderedPrompt};
use crate::jsonl;

/// Number of criteria the judge is asked to score.
pub const SCORED_CRITERIA: usize = 4;

/// Default rating threshold above which a summary counts as "good".
pub const DEFAULT_GOODNESS_THRESHOLD: f64 = 0.67;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no scores found in reply")]
    NoScores,
    #[error("expected {expected} scores, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("score {value} out of range [0,1]")]
    OutOfRange { value: String },
    #[error("labeled scores present but label {label} missing")]
    MissingLabel { label: usize },
    #[error("labeled scores include unexpected label {label}")]
    UnexpectedLabel { label: usize },
    #[error("label {label} appears with conflicting values")]
    ConflictingLabel { label: usize },
}

/// Why one item could not be critiqued.
#[derive(Debug, thiserror::Error)]
pub enum CritiqueFailure {
    #[error("prompt rendering failed: {0}")]
    Prompt(#[from] PromptError),
    #[error("judge transport failure: {0}")]
    Transport(BackendError),
    #[error("reply unparseable after {attempts} attempts: {last}")]
    Unparseable { attempts: u32, last: ParseError },
}

#[derive(Debug, thiserror::Error)]
pub enum CritiqueError {
    #[error("invalid judge settings: {0}")]
    BadSettings(String),
    #[error("parallelism must be at least 1")]
    BadParallelism,
    #[error("critique failed for \"{id}\": {source}")]
    Failed {
        id: String,
        #[source]
        source: CritiqueFailure,
    },
    #[error("manual labels reference unknown ids: {0}")]
    UnknownManualIds(String),
    #[error("manual label file line {line}: {message}")]
    BadManualLabel { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] jsonl::JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoodnessSource {
    Derived,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goodness {
    pub good: bool,
    pub source: GoodnessSource,
}

/// Scores for one item. The four criterion fields are always in [0, 1];
/// goodness is attached later by [`derive_goodness`].
#[derive(Debug, Clone, PartialEq)]
pub struct CritiqueScores {
    pub relevance: f64,
    pub coverage: f64,
    pub impurity: f64,
    pub rating: f64,
    pub goodness: Option<Goodness>,
}

/// Judge configuration: transport parameters (model, temperature, retries)
/// plus the parse-retry budget and the goodness threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSettings {
    pub params: GenerationParams,
    /// Reformat-reminder retries after an unparseable reply.
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

impl JudgeSettings {
    pub fn named(model_name: &str) -> Self {
        Self {
            params: GenerationParams::named(model_name),
            parse_retries: default_parse_retries(),
            goodness_threshold: DEFAULT_GOODNESS_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), CritiqueError> {
        self.params
            .validate()
            .map_err(|e| CritiqueError::BadSettings(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.goodness_threshold) {
            return Err(CritiqueError::BadSettings(format!(
                "goodness_threshold must be in [0,1], got {}",
                self.goodness_threshold
            )));
        }
        Ok(())
    }
}

/// One triplet paired with the text a model generated for it.
#[derive(Debug, Clone)]
pub struct CritiqueInput {
    pub triplet: Triplet,
    pub generated: String,
}

/// Per-item critique result: scored, or a marker describing the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct CritiqueOutcome {
    pub id: String,
    pub scores: Option<CritiqueScores>,
    /// SHA-256 of the last raw judge reply, when any reply was received.
    pub raw_reply_digest: Option<String>,
    pub error: Option<String>,
}

/// On-disk critique row. `gd` is `"good"`/`"not-good"`, `gd_source` is
/// `"derived"`/`"manual"`; failed items carry `error` and omit the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gd_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn label_patterns() -> &'static (regex::Regex, regex::Regex) {
    use std::sync::OnceLock;
    static RES: OnceLock<(regex::Regex, regex::Regex)> = OnceLock::new();
    RES.get_or_init(|| {
        // "Criteria 1: 0.8", "criterion 2) .5", …
        let keyword =
            regex::Regex::new(r"(?i)criteri\w*\s+#?(\d{1,2})\s*[.:)\]]\s*(\d+(?:\.\d+)?|\.\d+)")
                .expect("keyword label regex");
        // Line-anchored "1. 0.8" / "2: 0.8" / "3) 0.8"; the whitespace
        // after the separator keeps a bare decimal like "1.5" from being
        // misread as label 1 with value 5.
        let numbered = regex::Regex::new(r"(?m)^\s*(\d{1,2})\s*[.:)\]]\s+(\d+(?:\.\d+)?|\.\d+)\b")
            .expect("numbered label regex");
        (keyword, numbered)
    })
}

fn plain_number_pattern() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    // Decimal-pointed literals only: bare integers are usually list
    // numbering, not scores. The optional sign is captured so that a
    // negative score errors as out-of-range instead of losing its sign.
    RE.get_or_init(|| regex::Regex::new(r"(-?)(\d+\.\d+|\.\d+)").expect("plain number regex"))
}

fn check_range(text: &str) -> Result<f64, ParseError> {
    let value: f64 = text.parse().map_err(|_| ParseError::OutOfRange {
        value: text.to_string(),
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(ParseError::OutOfRange {
            value: text.to_string(),
        });
    }
    Ok(value)
}

/// Extracts exactly `expected` scores in [0, 1] from a judge reply.
///
/// Labeled scores win when any are present: both "Criteria N <sep> value"
/// and line-anchored "N. value" forms are recognized, and the labels must
/// then be exactly 1..=expected (missing, extra, or conflicting labels are
/// errors). With no labels, the first `expected` decimal-pointed literals
/// are taken in reading order and extras are tolerated. Any candidate
/// value outside [0, 1] is an error — values are never clamped.
pub fn parse_scores(raw: &str, expected: usize) -> Result<Vec<f64>, ParseError> {
    assert!(expected >= 1, "expected must be at least 1");
    let (keyword, numbered) = label_patterns();

    let mut labeled: BTreeMap<usize, (f64, String)> = BTreeMap::new();
    for caps in keyword.captures_iter(raw).chain(numbered.captures_iter(raw)) {
        let label: usize = caps[1].parse().expect("label digits parse");
        let text = caps[2].to_string();
        let value = check_range(&text)?;
        match labeled.get(&label) {
            Some((prev, _)) if *prev != value => {
                return Err(ParseError::ConflictingLabel { label })
            }
            Some(_) => {}
            None => {
                labeled.insert(label, (value, text));
            }
        }
    }

    if !labeled.is_empty() {
        for (&label, _) in &labeled {
            if label == 0 || label > expected {
                return Err(ParseError::UnexpectedLabel { label });
            }
        }
        for label in 1..=expected {
            if !labeled.contains_key(&label) {
                return Err(ParseError::MissingLabel { label });
            }
        }
        return Ok(labeled.into_values().map(|(v, _)| v).collect());
    }

    let mut values = Vec::new();
    for caps in plain_number_pattern().captures_iter(raw) {
        if values.len() == expected {
            break; // extras tolerated
        }
        let signed = format!("{}{}", &caps[1], &caps[2]);
        values.push(check_range(&signed)?);
    }
    if values.is_empty() {
        return Err(ParseError::NoScores);
    }
    if values.len() != expected {
        return Err(ParseError::WrongCount {
            expected,
            found: values.len(),
        });
    }
    Ok(values)
}

/// Renders the judge prompt, queries the backend, and parses four scores.
/// On a parse failure the prompt is re-sent with a format reminder
/// appended, up to `parse_retries` times. Goodness is left unset; returns
/// the scores plus the raw reply they were parsed from.
pub fn critique_one(
    backend: &dyn Backend,
    settings: &JudgeSettings,
    triplet: &Triplet,
    generated: &str,
    aspect_set: &[String],
) -> Result<(CritiqueScores, String), CritiqueFailure> {
    let base = render_critique(triplet, generated, aspect_set)?;
    let reminder = format!(
        "Reminder: return exactly {SCORED_CRITERIA} scores, one per line, each a number \
         between 0 and 1, with no explanation."
    );
    let mut last_parse_error = None;
    for attempt in 0..=settings.parse_retries {
        let prompt = if attempt == 0 {
            base.clone()
        } else {
            RenderedPrompt {
                system: base.system.clone(),
                user: format!("{}\n\n{reminder}", base.user),
            }
        };
        let (reply, _) = generate(backend, &prompt, &settings.params)
            .map_err(|(e, _)| CritiqueFailure::Transport(e))?;
        match parse_scores(&reply, SCORED_CRITERIA) {
            Ok(values) => {
                let scores = CritiqueScores {
                    relevance: values[0],
                    coverage: values[1],
                    impurity: values[2],
                    rating: values[3],
                    goodness: None,
                };
                return Ok((scores, reply));
            }
            Err(e) => last_parse_error = Some((e, reply)),
        }
    }
    let (last, _reply) = last_parse_error.expect("loop ran at least once");
    Err(CritiqueFailure::Unparseable {
        attempts: settings.parse_retries + 1,
        last,
    })
}

/// Resolves which aspect set accompanies each triplet in the impurity
/// criterion: the triplet's domain's set when it covers the triplet's
/// aspect, otherwise a fallback set (typically the distinct aspects of the
/// batch).
#[derive(Debug, Clone, Default)]
pub struct AspectSets {
    pub by_domain: BTreeMap<String, Vec<String>>,
    pub fallback: Vec<String>,
}

impl AspectSets {
    /// Domain map plus a fallback listing every distinct aspect in the
    /// batch (sorted), so each triplet always resolves to a set containing
    /// its own aspect.
    pub fn from_items<'a>(
        items: impl IntoIterator<Item = &'a Triplet>,
        by_domain: BTreeMap<String, Vec<String>>,
    ) -> Self {
        let mut aspects: Vec<String> = items
            .into_iter()
            .map(|t| t.aspect.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        aspects.sort();
        Self {
            by_domain,
            fallback: aspects,
        }
    }

    pub fn for_triplet(&self, triplet: &Triplet) -> &[String] {
        if let Some(domain) = &triplet.domain {
            if let Some(set) = self.by_domain.get(domain) {
                if set.iter().any(|a| a == &triplet.aspect) {
                    return set;
                }
            }
        }
        &self.fallback
    }
}

/// Critiques each item, in input order, on up to `parallelism` workers.
/// Lenient mode records per-item failures as markers; fail-fast aborts on
/// the first failure.
pub fn run_critique(
    backend: &dyn Backend,
    settings: &JudgeSettings,
    items: &[CritiqueInput],
    aspect_sets: &AspectSets,
    parallelism: usize,
    fail_fast: bool,
    limiter: &RateLimiter,
) -> Result<Vec<CritiqueOutcome>, CritiqueError> {
    settings.validate()?;
    if parallelism == 0 {
        return Err(CritiqueError::BadParallelism);
    }
    let stop = std::sync::atomic::AtomicBool::new(false);
    let outcomes = parallel_map_ordered(items, parallelism, &stop, |_, item| {
        limiter.acquire();
        let result = critique_one(
            backend,
            settings,
            &item.triplet,
            &item.generated,
            aspect_sets.for_triplet(&item.triplet),
        );
        if fail_fast && result.is_err() {
            stop.store(true, std::sync::atomic::Ordering::SeqCst);
        }
        result
    });

    let mut results = Vec::with_capacity(items.len());
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Some(Ok((scores, reply))) => results.push(CritiqueOutcome {
                id: item.triplet.id.clone(),
                scores: Some(scores),
                raw_reply_digest: Some(sha256_hex(&reply)),
                error: None,
            }),
            Some(Err(failure)) => {
                if fail_fast {
                    return Err(CritiqueError::Failed {
                        id: item.triplet.id.clone(),
                        source: failure,
                    });
                }
                results.push(CritiqueOutcome {
                    id: item.triplet.id.clone(),
                    scores: None,
                    raw_reply_digest: None,
                    error: Some(failure.to_string()),
                });
            }
            None => unreachable!("slots are only skipped after a fail-fast stop"),
        }
    }
    Ok(results)
}

/// Attaches a goodness label to every scored outcome: the manual label
/// when one exists for the id (source `manual`), otherwise
/// `rating >= threshold` (source `derived`). Manual ids must all exist in
/// the outcome list.
pub fn derive_goodness(
    outcomes: &mut [CritiqueOutcome],
    manual: Option<&BTreeMap<String, bool>>,
    threshold: f64,
) -> Result<(), CritiqueError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CritiqueError::BadSettings(format!(
            "goodness threshold must be in [0,1], got {threshold}"
        )));
    }
    if let Some(manual) = manual {
        let known: std::collections::BTreeSet<&str> =
            outcomes.iter().map(|o| o.id.as_str()).collect();
        let unknown: Vec<&str> = manual
            .keys()
            .map(String::as_str)
            .filter(|id| !known.contains(id))
            .collect();
        if !unknown.is_empty() {
            return Err(CritiqueError::UnknownManualIds(unknown.join(", ")));
        }
    }
    for outcome in outcomes.iter_mut() {
        let Some(scores) = &mut outcome.scores else {
            continue;
        };
        scores.goodness = Some(match manual.and_then(|m| m.get(&outcome.id)) {
            Some(&good) => Goodness {
                good,
                source: GoodnessSource::Manual,
            },
            None => Goodness {
                good: scores.rating >= threshold,
                source: GoodnessSource::Derived,
            },
        });
    }
    Ok(())
}

/// Reads a two-column manual-label file: `id,good|not-good` per line. An
/// optional `id,label` header is skipped; blank lines are ignored.
pub fn import_manual_labels(path: &Path) -> Result<BTreeMap<String, bool>, CritiqueError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        CritiqueError::Io(jsonl::JsonlError::Io {
            path: path.display().to_string(),
            source,
        })
    })?;
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (line_no == 1 && line == "id,label") {
            continue;
        }
        let Some((id, value)) = line.split_once(',') else {
            return Err(CritiqueError::BadManualLabel {
                line: line_no,
                message: "expected two comma-separated columns".into(),
            });
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(CritiqueError::BadManualLabel {
                line: line_no,
                message: "empty id".into(),
            });
        }
        let good = match value.trim() {
            "good" => true,
            "not-good" => false,
            other => {
                return Err(CritiqueError::BadManualLabel {
                    line: line_no,
                    message: format!("expected \"good\" or \"not-good\", got \"{other}\""),
                })
            }
        };
        if labels.insert(id.to_string(), good).is_some() {
            return Err(CritiqueError::BadManualLabel {
                line: line_no,
                message: format!("duplicate id \"{id}\""),
            });
        }
    }
    Ok(labels)
}

/// Flattens outcomes into on-disk rows.
pub fn to_records(outcomes: &[CritiqueOutcome]) -> Vec<CritiqueRecord> {
    outcomes
        .iter()
        .map(|o| {
            let goodness = o.scores.as_ref().and_then(|s| s.goodness);
            CritiqueRecord {
                id: o.id.clone(),
                re: o.scores.as_ref().map(|s| s.relevance),
                cv: o.scores.as_ref().map(|s| s.coverage),
                im: o.scores.as_ref().map(|s| s.impurity),
                ra: o.scores.as_ref().map(|s| s.rating),
                gd: goodness.map(|g| {
                    if g.good { "good" } else { "not-good" }.to_string()
                }),
                gd_source: goodness.map(|g| {
                    match g.source {
                        GoodnessSource::Derived => "derived",
                        GoodnessSource::Manual => "manual",
                    }
                    .to_string()
                }),
                raw_reply_digest: o.raw_reply_digest.clone(),
                error: o.error.clone(),
            }
        })
        .collect()
}

/// Deterministic offline judge for tests and desk-scale runs: scores are
/// token-overlap statistics between the generated summary and the
/// reference, re-extracted from the critique prompt. Its absolute values
/// are NOT comparable to any real judge model — only ordering and
/// reproducibility are meaningful.
pub struct MockJudgeBackend;

const REFERENCE_MARKER: &str = "\nGround truth summary : ";
const GENERATED_MARKER: &str = "\nSummary with respect to an aspect ";
const CRITERIA_MARKER: &str = "\nEvaluate the above aspect based summary";

impl MockJudgeBackend {
    fn extract<'a>(user: &'a str) -> Result<(&'a str, &'a str), BackendError> {
        let after_ref = user.split_once(REFERENCE_MARKER).ok_or_else(|| {
            BackendError::Permanent("prompt is missing the reference-summary marker".into())
        })?;
        let (reference, rest) = after_ref.1.split_once(GENERATED_MARKER).ok_or_else(|| {
            BackendError::Permanent("prompt is missing the generated-summary marker".into())
        })?;
        let generated_with_aspect = rest.split_once(CRITERIA_MARKER).map(|(g, _)| g).ok_or_else(
            || BackendError::Permanent("prompt is missing the criteria marker".into()),
        )?;
        // The generated text follows "…an aspect {aspect}: ".
        let generated = generated_with_aspect
            .split_once(": ")
            .map(|(_, g)| g)
            .ok_or_else(|| {
                BackendError::Permanent("prompt generated-summary line is malformed".into())
            })?;
        Ok((reference, generated))
    }
}

impl Backend for MockJudgeBackend {
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        _params: &GenerationParams,
    ) -> Result<String, BackendError> {
        use std::collections::BTreeSet;
        let (reference, generated) = Self::extract(&prompt.user)?;
        let ref_tokens: BTreeSet<String> = crate::metrics::tokenize(reference).into_iter().collect();
        let gen_tokens: BTreeSet<String> = crate::metrics::tokenize(generated).into_iter().collect();
        let overlap = ref_tokens.intersection(&gen_tokens).count() as f64;
        let precision = if gen_tokens.is_empty() {
            0.0
        } else {
            overlap / gen_tokens.len() as f64
        };
        let recall = if ref_tokens.is_empty() {
            0.0
        } else {
            overlap / ref_tokens.len() as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(format!(
            "{f1:.2}\n{recall:.2}\n{precision:.2}\n{f1:.2}"
        ))
    }

    fn deterministic(&self) -> bool {
        true
    }
}
