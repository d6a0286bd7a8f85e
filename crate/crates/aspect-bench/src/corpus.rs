//! Triplet data model and the corpus interchange format.
//!
//! A corpus is UTF-8 line-delimited JSON, one object per line, with required
//! keys `id`, `title`, `document`, `aspect`, `summary` and optional `domain`.
//! Unknown keys are preserved on round-trip so foreign metadata survives
//! normalization. Iteration order is on-disk order, and duplicate ids are a
//! hard error — sampled splits must stay auditable against their source
//! lines.

use serde::{Deserialize, Serialize};
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: malformed record: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path} line {line}: missing or empty required field \"{field}\"")]
    MissingField {
        path: String,
        line: usize,
        field: String,
    },
    #[error("{path} line {line}: duplicate id \"{id}\" (first seen on line {first_line})")]
    DuplicateId {
        path: String,
        line: usize,
        first_line: usize,
        id: String,
    },
}

/// One document–aspect–reference-summary record: the atomic unit of the
/// whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    pub title: String,
    pub document: String,
    pub aspect: String,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Unknown interchange keys, preserved verbatim on round-trip.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Triplet {
    /// Checks the per-record invariants: non-empty id, and document/aspect/
    /// summary non-empty after whitespace trimming. Returns the offending
    /// field name on failure.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.id.trim().is_empty() {
            return Err("id");
        }
        if self.document.trim().is_empty() {
            return Err("document");
        }
        if self.aspect.trim().is_empty() {
            return Err("aspect");
        }
        if self.summary.trim().is_empty() {
            return Err("summary");
        }
        Ok(())
    }
}

/// An ordered, duplicate-free collection of triplets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub triplets: Vec<Triplet>,
    pub source_path: Option<String>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Triplet> {
        self.triplets.iter().find(|t| t.id == id)
    }
}

/// Aspect label → member triplet ids (corpus order) with per-aspect counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AspectIndex {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl AspectIndex {
    pub fn count(&self, aspect: &str) -> usize {
        self.entries.get(aspect).map_or(0, |ids| ids.len())
    }

    pub fn n_aspects(&self) -> usize {
        self.entries.len()
    }
}

/// Corpus-level summary statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_triplets: usize,
    pub n_aspects: usize,
    pub avg_doc_tokens: f64,
    pub avg_summary_tokens: f64,
    pub per_domain_counts: BTreeMap<String, usize>,
}

/// Number of whitespace-delimited tokens. This is the *statistics* token
/// rule; metric tokenization (lowercasing, punctuation splits) lives in the
/// metrics module and is deliberately separate.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Parses one interchange line into a validated triplet.
fn parse_line(path: &str, line_no: usize, line: &str) -> Result<Triplet, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
            path: path.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
    if !value.is_object() {
        return Err(CorpusError::MalformedLine {
            path: path.to_string(),
            line: line_no,
            message: "record is not a JSON object".to_string(),
        });
    }
    // Probe required keys by hand first so the error names the field rather
    // than surfacing a serde message.
    for field in ["id", "title", "document", "aspect", "summary"] {
        if value.get(field).map_or(true, |v| !v.is_string()) {
            return Err(CorpusError::MissingField {
                path: path.to_string(),
                line: line_no,
                field: field.to_string(),
            });
        }
    }
    let triplet: Triplet =
        serde_json::from_value(value).map_err(|e| CorpusError::MalformedLine {
            path: path.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
    if let Err(field) = triplet.validate() {
        return Err(CorpusError::MissingField {
            path: path.to_string(),
            line: line_no,
            field: field.to_string(),
        });
    }
    Ok(triplet)
}

/// Loads a corpus file strictly: any malformed line, missing field, or
/// duplicate id fails the load with its line number.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let (corpus, _) = load_corpus_impl(path, false)?;
    Ok(corpus)
}

/// Loads a corpus leniently: invalid lines are skipped and counted instead
/// of failing. Duplicate ids remain a hard error — silently dropping one of
/// two claimants would make sampled splits unauditable.
pub fn load_corpus_lenient(path: &Path) -> Result<(Corpus, usize), CorpusError> {
    load_corpus_impl(path, true)
}

fn load_corpus_impl(path: &Path, lenient: bool) -> Result<(Corpus, usize), CorpusError> {
    let path_str = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| CorpusError::Io {
        path: path_str.clone(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut triplets = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut skipped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&path_str, line_no, &line) {
            Ok(triplet) => match seen.entry(triplet.id.clone()) {
                Entry::Vacant(v) => {
                    v.insert(line_no);
                    triplets.push(triplet);
                }
                Entry::Occupied(o) => {
                    return Err(CorpusError::DuplicateId {
                        path: path_str,
                        line: line_no,
                        first_line: *o.get(),
                        id: triplet.id,
                    })
                }
            },
            Err(e) if lenient => {
                let _ = e;
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((
        Corpus {
            triplets,
            source_path: Some(path_str),
        },
        skipped,
    ))
}

/// Writes a corpus in the interchange format. Round-trip guarantee:
/// `load_corpus(save_corpus(c))` is field-equal to `c` (unknown keys
/// included; their relative order is not promised).
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    crate::jsonl::write_lines(path, &corpus.triplets).map_err(|e| match e {
        crate::jsonl::JsonlError::Io { path, source } => CorpusError::Io { path, source },
        crate::jsonl::JsonlError::Malformed { path, line, message } => {
            CorpusError::MalformedLine { path, line, message }
        }
    })
}

/// Groups triplet ids by aspect label. Σ counts == corpus size, every listed
/// aspect has count ≥ 1, ids stay in corpus order.
pub fn build_aspect_index(corpus: &Corpus) -> AspectIndex {
    let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in &corpus.triplets {
        entries.entry(t.aspect.clone()).or_default().push(t.id.clone());
    }
    AspectIndex { entries }
}

/// Computes corpus statistics. Averages use [`token_count`]; per-domain
/// counts include only triplets carrying a domain label; an empty corpus
/// reports zeros.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let n = corpus.len();
    let mut doc_tokens = 0usize;
    let mut summary_tokens = 0usize;
    let mut aspects: HashSet<&str> = HashSet::new();
    let mut per_domain_counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &corpus.triplets {
        doc_tokens += token_count(&t.document);
        summary_tokens += token_count(&t.summary);
        aspects.insert(&t.aspect);
        if let Some(domain) = &t.domain {
            *per_domain_counts.entry(domain.clone()).or_default() += 1;
        }
    }
    CorpusStats {
        n_triplets: n,
        n_aspects: aspects.len(),
        avg_doc_tokens: if n == 0 { 0.0 } else { doc_tokens as f64 / n as f64 },
        avg_summary_tokens: if n == 0 { 0.0 } else { summary_tokens as f64 / n as f64 },
        per_domain_counts,
    }
}

/// Renders stats as the human-readable block the CLI prints.
pub fn format_stats(stats: &CorpusStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("triplets:            {}\n", stats.n_triplets));
    out.push_str(&format!("distinct aspects:    {}\n", stats.n_aspects));
    out.push_str(&format!("avg document tokens: {:.1}\n", stats.avg_doc_tokens));
    out.push_str(&format!("avg summary tokens:  {:.1}\n", stats.avg_summary_tokens));
    if stats.per_domain_counts.is_empty() {
        out.push_str("domains:             (none labeled)\n");
    } else {
        out.push_str("domains:\n");
        for (domain, count) in &stats.per_domain_counts {
            out.push_str(&format!("  {domain}: {count}\n"));
        }
    }
    out
}
