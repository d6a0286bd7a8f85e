//! Prompt templates and rendering for the two model-facing stages:
//! summary generation (fine-tune/inference) and judge critique.
//!
//! The template texts are frozen verbatim — including their line layout,
//! punctuation, and one intentionally preserved run-on sentence in the
//! fourth critique criterion — because generation and judging are sensitive
//! to the exact wording. Golden fixture files under `fixtures/prompts/`
//! are the normative rendering; the constants here must stay in sync with
//! them byte-for-byte.
//!
//! Placeholder syntax is single-brace `{name}` with single-pass,
//! non-recursive substitution: braces arriving inside a *value* (e.g. a
//! document containing the literal text `{aspect}`) pass through untouched.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Triplet;
use crate::jsonl;
use crate::variations::DatasetVariation;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("empty value for placeholder \"{0}\"")]
    EmptyValue(String),
    #[error("template \"{template}\" references undeclared placeholder \"{placeholder}\"")]
    UndeclaredPlaceholder { template: String, placeholder: String },
    #[error("template \"{template}\" declares placeholder \"{placeholder}\" that never appears")]
    UnusedPlaceholder { template: String, placeholder: String },
    #[error("triplet \"{id}\" has no reference summary to use as a completion")]
    EmptyCompletion { id: String },
    #[error("aspect set does not contain the triplet's aspect \"{aspect}\"")]
    AspectSetMissingAspect { aspect: String },
    #[error("SFT export requires a non-empty train split")]
    EmptyTrainSplit,
    #[error(transparent)]
    Io(#[from] jsonl::JsonlError),
}

/// A named pair of system/user text templates plus the placeholders the
/// bodies must use — no more, no fewer (checked by [`PromptTemplate::validate`]).
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub system: &'static str,
    pub user: &'static str,
    pub placeholders: &'static [&'static str],
}

/// A template with every placeholder substituted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

/// One supervised fine-tuning example: the inference prompt for a triplet
/// paired with its reference summary as the completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftPair {
    pub prompt: RenderedPrompt,
    pub completion: String,
}

/// On-disk SFT record: one line per training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub system: String,
    pub user: String,
    pub completion: String,
    pub id: String,
}

const INFERENCE_SYSTEM: &str = "You are an AI assistant who is to generate the summary of a \
textual document specific to a certain aspect.";

const INFERENCE_USER: &str = "Summarize the textual document given below from the perspective \
of {aspect}:\n### Document: {document}";

const CRITIQUE_SYSTEM: &str = "You are an AI assistant who is to evaluate the summary of a \
textual document specific to a certain aspect. You need to return a score between 0 and 1 \
reflecting the quality of the generated summary based on some criteria.";

const CRITIQUE_USER: &str = "You are given a textual document and the corresponding summary \
of the document generated from the respective of an aspect {aspect} predicted by a language \
model as follows.\n\
Document: {document}\n\
Ground truth summary : {reference_summary}\n\
Summary with respect to an aspect {aspect}: {generated_summary}\n\
Evaluate the above aspect based summary for the document in terms of each of the following \
criteria and return only a score between 0 and 1 without any explanation:\n\
1. The extent to which the generated summary is relevant to a specific aspect {aspect} based \
summary of the document.\n\
2. The extent to which the generated aspect-based summary correctly covers all the important \
key points described in the aspect {aspect} based summary of the document.\n\
3. The extent to which the summary does not contain information specific to all other \
possible aspects {aspect_complement} based summary.\n\
4. Rate the summary from the point of view of the aspect \u{2013} whether the summary is \
good, average, or bad. A good summary effectively captures the essential points, presenting \
them clearly and concisely. It maintains accuracy, encourages reader engagement, and serves \
as a compelling introduction to the content. An average summary conveys the main points but \
may lack some clarity or detail, presenting a decent overview without standing out in terms \
of conciseness or precision. It provides a basic understanding but might benefit from a more \
refined focused summary fails to accurately convey the main points, containing inaccuracies \
or misinterpretations. It is either overly verbose or lacks coherence, making it difficult \
for the reader to grasp the core information effectively.";

/// The generation prompt: asks for a summary of `{document}` from the
/// perspective of `{aspect}`.
pub const INFERENCE_TEMPLATE: PromptTemplate = PromptTemplate {
    name: "inference",
    system: INFERENCE_SYSTEM,
    user: INFERENCE_USER,
    placeholders: &["aspect", "document"],
};

/// The judge prompt: presents document, reference summary, and generated
/// summary, then asks for four 0–1 scores (relevance, coverage, aspect
/// impurity, overall rating). The fifth quality label is derived from the
/// fourth score downstream, never requested from the judge.
pub const CRITIQUE_TEMPLATE: PromptTemplate = PromptTemplate {
    name: "critique",
    system: CRITIQUE_SYSTEM,
    user: CRITIQUE_USER,
    placeholders: &[
        "aspect",
        "document",
        "reference_summary",
        "generated_summary",
        "aspect_complement",
    ],
};

fn placeholder_pattern() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"\{([a-z_]+)\}").expect("valid placeholder regex"))
}

impl PromptTemplate {
    /// Checks the declared placeholder list matches the `{name}` tokens
    /// actually present in the system+user bodies, in both directions.
    pub fn validate(&self) -> Result<(), PromptError> {
        let mut found: Vec<&str> = Vec::new();
        for body in [self.system, self.user] {
            for cap in placeholder_pattern().captures_iter(body) {
                let name = cap.get(1).expect("group 1 exists").as_str();
                if !found.contains(&name) {
                    found.push(name);
                }
            }
        }
        for name in &found {
            if !self.placeholders.contains(name) {
                return Err(PromptError::UndeclaredPlaceholder {
                    template: self.name.to_string(),
                    placeholder: name.to_string(),
                });
            }
        }
        for name in self.placeholders {
            if !found.contains(name) {
                return Err(PromptError::UnusedPlaceholder {
                    template: self.name.to_string(),
                    placeholder: name.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Substitutes every `{name}` in one pass. Values are inserted
    /// literally — they are never re-scanned for placeholders — and every
    /// value must be non-blank.
    fn render(&self, values: &BTreeMap<&str, &str>) -> Result<RenderedPrompt, PromptError> {
        let fill = |body: &str| -> Result<String, PromptError> {
            let mut out = String::with_capacity(body.len());
            let mut last = 0;
            for cap in placeholder_pattern().captures_iter(body) {
                let whole = cap.get(0).expect("group 0 exists");
                let name = cap.get(1).expect("group 1 exists").as_str();
                let Some(value) = values.get(name) else {
                    return Err(PromptError::UndeclaredPlaceholder {
                        template: self.name.to_string(),
                        placeholder: name.to_string(),
                    });
                };
                if value.trim().is_empty() {
                    return Err(PromptError::EmptyValue(name.to_string()));
                }
                out.push_str(&body[last..whole.start()]);
                out.push_str(value);
                last = whole.end();
            }
            out.push_str(&body[last..]);
            Ok(out)
        };
        Ok(RenderedPrompt {
            system: fill(self.system)?,
            user: fill(self.user)?,
        })
    }
}

/// Renders the generation prompt for one triplet.
pub fn render_inference(triplet: &Triplet) -> Result<RenderedPrompt, PromptError> {
    let mut values = BTreeMap::new();
    values.insert("aspect", triplet.aspect.as_str());
    values.insert("document", triplet.document.as_str());
    INFERENCE_TEMPLATE.render(&values)
}

/// Renders the generation prompt and pairs it with the triplet's reference
/// summary as the training completion.
pub fn render_sft_pair(triplet: &Triplet) -> Result<SftPair, PromptError> {
    if triplet.summary.trim().is_empty() {
        return Err(PromptError::EmptyCompletion {
            id: triplet.id.clone(),
        });
    }
    Ok(SftPair {
        prompt: render_inference(triplet)?,
        completion: triplet.summary.clone(),
    })
}

/// Renders the judge prompt for one generated summary. `aspect_set` is the
/// full aspect set of the triplet's group (e.g. its domain); the impurity
/// criterion receives the set minus the triplet's own aspect, in the given
/// order, joined with ", " — or the word "none" when the complement is
/// empty.
pub fn render_critique(
    triplet: &Triplet,
    generated: &str,
    aspect_set: &[String],
) -> Result<RenderedPrompt, PromptError> {
    if generated.trim().is_empty() {
        return Err(PromptError::EmptyValue("generated_summary".to_string()));
    }
    if !aspect_set.iter().any(|a| a == &triplet.aspect) {
        return Err(PromptError::AspectSetMissingAspect {
            aspect: triplet.aspect.clone(),
        });
    }
    let mut complement: Vec<&str> = Vec::new();
    for aspect in aspect_set {
        if aspect != &triplet.aspect && !complement.contains(&aspect.as_str()) {
            complement.push(aspect);
        }
    }
    let complement = if complement.is_empty() {
        "none".to_string()
    } else {
        complement.join(", ")
    };

    let mut values = BTreeMap::new();
    values.insert("aspect", triplet.aspect.as_str());
    values.insert("document", triplet.document.as_str());
    values.insert("reference_summary", triplet.summary.as_str());
    values.insert("generated_summary", generated);
    values.insert("aspect_complement", complement.as_str());
    CRITIQUE_TEMPLATE.render(&values)
}

/// Writes one SFT record per train-split triplet, in split order. Returns
/// the number of records written. Reruns over the same variation produce a
/// byte-identical file.
pub fn export_sft(variation: &DatasetVariation, path: &Path) -> Result<usize, PromptError> {
    if variation.train.is_empty() {
        return Err(PromptError::EmptyTrainSplit);
    }
    let mut records = Vec::with_capacity(variation.train.len());
    for triplet in &variation.train {
        let pair = render_sft_pair(triplet)?;
        records.push(SftRecord {
            system: pair.prompt.system,
            user: pair.prompt.user,
            completion: pair.completion,
            id: triplet.id.clone(),
        });
    }
    jsonl::write_lines(path, &records)?;
    Ok(records.len())
}
