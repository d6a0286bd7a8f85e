//! Dataset-variation construction: four selection rules over a corpus plus
//! a seeded train/val/test split.
//!
//! The four rules are:
//!
//! * **domain_wise** — keep triplets whose aspect belongs to a curated
//!   domain → aspect-set map (default: [`default_domain_map`]), annotating
//!   each kept triplet with its domain.
//! * **high_freq** — rank aspects by descending document count (ties broken
//!   lexicographically) and sample a fixed number of documents per top
//!   aspect.
//! * **low_freq** — keep aspects whose document count falls in a frequency
//!   band, filling the pool in ascending-frequency order up to a cap.
//! * **random** — uniform sample without replacement from the whole corpus.
//!
//! Everything downstream of the corpus is a pure function of
//! `(corpus, spec)`: sampling and shuffling use the ChaCha20 streams from
//! [`crate::rng`] with fixed per-stage labels (`"select"`, `"split"`), so
//! rebuilding a variation reproduces it member-for-member. A variation can
//! be serialized as a manifest (header line + one line per member id) and
//! later reconstructed against the same corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_aspect_index, Corpus, Triplet};
use crate::{jsonl, rng};

/// PRNG algorithm identity, embedded in every manifest header so a reader
/// can tell whether another implementation can reproduce the sampling.
pub const RNG_ALGORITHM: &str = "chacha20/rejection-fisher-yates";

#[derive(Debug, thiserror::Error)]
pub enum VariationError {
    #[error("invalid variation spec: {0}")]
    BadSpec(String),
    #[error("selection produced an empty pool")]
    EmptyPool,
    #[error("corpus contains no aspects")]
    NoAspects,
    #[error("no aspect has a document count within [{freq_min}, {freq_max}]")]
    NoEligibleAspects { freq_min: usize, freq_max: usize },
    #[error("pool exhausted: need {need} have {have}")]
    PoolExhausted { need: usize, have: usize },
    #[error("manifest references id \"{id}\" not present in the corpus")]
    MissingId { id: String },
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Io(#[from] jsonl::JsonlError),
}

/// How the pool is selected from the corpus. Serialized with a `kind` tag
/// so a spec carries exactly the fields its rule needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionRule {
    /// Aspects curated per domain; `None` means the built-in default map.
    DomainWise {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_map: Option<BTreeMap<String, Vec<String>>>,
    },
    /// Top `n_aspects` most frequent aspects, `docs_per_aspect` sampled each.
    HighFreq {
        n_aspects: usize,
        docs_per_aspect: usize,
    },
    /// Aspects with document count in `[freq_min, freq_max]`, rarest first,
    /// capped at `n_total` triplets.
    LowFreq {
        freq_min: usize,
        freq_max: usize,
        n_total: usize,
    },
    /// Uniform sample of `n_total` triplets from the whole corpus.
    Random { n_total: usize },
}

impl SelectionRule {
    pub fn kind(&self) -> &'static str {
        match self {
            SelectionRule::DomainWise { .. } => "domain_wise",
            SelectionRule::HighFreq { .. } => "high_freq",
            SelectionRule::LowFreq { .. } => "low_freq",
            SelectionRule::Random { .. } => "random",
        }
    }
}

/// Full recipe for one dataset variation: selection rule, split sizes, and
/// the seed that makes sampling reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSpec {
    pub name: String,
    #[serde(flatten)]
    pub rule: SelectionRule,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
    pub seed: u64,
    /// When the pool is smaller than the requested split sizes, fill
    /// train → val → test instead of failing.
    #[serde(default)]
    pub allow_truncate: bool,
}

/// What the selection actually took: per-aspect counts plus any warnings
/// (e.g. a mapped aspect absent from the corpus).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// A built variation: three disjoint splits plus the spec and log that
/// produced them.
#[derive(Debug, Clone)]
pub struct DatasetVariation {
    pub name: String,
    pub spec: VariationSpec,
    pub train: Vec<Triplet>,
    pub val: Vec<Triplet>,
    pub test: Vec<Triplet>,
    pub selection_log: SelectionLog,
}

impl DatasetVariation {
    /// Iterates all members in split order: train, then val, then test.
    pub fn members(&self) -> impl Iterator<Item = (&'static str, &Triplet)> {
        self.train
            .iter()
            .map(|t| ("train", t))
            .chain(self.val.iter().map(|t| ("val", t)))
            .chain(self.test.iter().map(|t| ("test", t)))
    }
}

/// The built-in domain → aspect-set map: four domains of four aspects each.
/// "Career" and "Life and career" are distinct labels on purpose — the
/// curated set contains near-duplicates, and selection is by exact label.
pub fn default_domain_map() -> BTreeMap<String, Vec<String>> {
    let mut map = BTreeMap::new();
    map.insert(
        "HealthCare".to_string(),
        ["Death", "Diagnosis", "Differential diagnosis", "Diagnosis-Classification"]
            .map(String::from)
            .to_vec(),
    );
    map.insert(
        "Education".to_string(),
        ["History", "Geography", "Taxonomy", "Education"]
            .map(String::from)
            .to_vec(),
    );
    map.insert(
        "Life and Career".to_string(),
        ["Career", "Political Career", "Personal Life", "Life and career"]
            .map(String::from)
            .to_vec(),
    );
    map.insert(
        "Music".to_string(),
        ["Production", "Composition", "Soundtrack", "Track Listing"]
            .map(String::from)
            .to_vec(),
    );
    map
}

/// Builds the variation for `spec` by dispatching on its rule.
pub fn build_variation(
    corpus: &Corpus,
    spec: &VariationSpec,
) -> Result<DatasetVariation, VariationError> {
    match &spec.rule {
        SelectionRule::DomainWise { .. } => build_domain_wise(corpus, spec),
        SelectionRule::HighFreq { .. } => build_high_freq(corpus, spec),
        SelectionRule::LowFreq { .. } => build_low_freq(corpus, spec),
        SelectionRule::Random { .. } => build_random(corpus, spec),
    }
}

/// Keeps triplets whose aspect appears in the domain map, annotating each
/// with its domain. Aspects in the map but absent from the corpus produce
/// warnings, not errors; an overall empty pool is an error.
pub fn build_domain_wise(
    corpus: &Corpus,
    spec: &VariationSpec,
) -> Result<DatasetVariation, VariationError> {
    let SelectionRule::DomainWise { domain_map } = &spec.rule else {
        return Err(VariationError::BadSpec(format!(
            "rule kind mismatch: expected domain_wise, got {}",
            spec.rule.kind()
        )));
    };
    let map = domain_map.clone().unwrap_or_else(default_domain_map);
    if map.is_empty() {
        return Err(VariationError::BadSpec(
            "domain map must not be empty".into(),
        ));
    }

    let mut aspect_to_domain: BTreeMap<&str, &str> = BTreeMap::new();
    for (domain, aspects) in &map {
        for aspect in aspects {
            if aspect_to_domain.insert(aspect, domain).is_some() {
                return Err(VariationError::BadSpec(format!(
                    "aspect \"{aspect}\" appears under multiple domains"
                )));
            }
        }
    }

    let mut pool = Vec::new();
    let mut log = SelectionLog::default();
    for triplet in &corpus.triplets {
        if let Some(domain) = aspect_to_domain.get(triplet.aspect.as_str()) {
            let mut chosen = triplet.clone();
            chosen.domain = Some(domain.to_string());
            pool.push(chosen);
            *log.counts.entry(triplet.aspect.clone()).or_insert(0) += 1;
        }
    }
    for (domain, aspects) in &map {
        for aspect in aspects {
            if !log.counts.contains_key(aspect) {
                log.warnings.push(format!(
                    "aspect \"{aspect}\" (domain \"{domain}\") not present in corpus"
                ));
            }
        }
    }
    if pool.is_empty() {
        return Err(VariationError::EmptyPool);
    }
    split_with_log(pool, spec, log)
}

/// Ranks aspects by descending document count (ties: lexicographically
/// ascending label) and samples `docs_per_aspect` documents per selected
/// aspect without replacement.
pub fn build_high_freq(
    corpus: &Corpus,
    spec: &VariationSpec,
) -> Result<DatasetVariation, VariationError> {
    let SelectionRule::HighFreq {
        n_aspects,
        docs_per_aspect,
    } = spec.rule
    else {
        return Err(VariationError::BadSpec(format!(
            "rule kind mismatch: expected high_freq, got {}",
            spec.rule.kind()
        )));
    };
    if n_aspects == 0 || docs_per_aspect == 0 {
        return Err(VariationError::BadSpec(
            "n_aspects and docs_per_aspect must be positive".into(),
        ));
    }
    let index = build_aspect_index(corpus);
    if index.entries.is_empty() {
        return Err(VariationError::NoAspects);
    }

    let mut ranked: Vec<(&String, usize)> = index
        .entries
        .iter()
        .map(|(aspect, ids)| (aspect, ids.len()))
        .collect();
    ranked.sort_by(|(a_label, a_n), (b_label, b_n)| {
        b_n.cmp(a_n).then_with(|| a_label.cmp(b_label))
    });
    ranked.truncate(n_aspects);

    let mut rng = rng::seeded(spec.seed, "select");
    let mut pool = Vec::new();
    let mut log = SelectionLog::default();
    for (aspect, available) in ranked {
        let ids = &index.entries[aspect];
        let k = docs_per_aspect.min(available);
        let chosen = rng::sample_indices(&mut rng, available, k);
        for idx in chosen {
            let id = &ids[idx];
            let triplet = corpus
                .get(id)
                .expect("aspect index references a corpus id");
            pool.push(triplet.clone());
        }
        log.counts.insert(aspect.clone(), k);
    }
    split_with_log(pool, spec, log)
}

/// Keeps aspects whose document count lies within `[freq_min, freq_max]`,
/// appending their triplets rarest-aspect-first (ties: lexicographic) until
/// `n_total` is reached. No randomness: the band plus the cap fully
/// determine the pool.
pub fn build_low_freq(
    corpus: &Corpus,
    spec: &VariationSpec,
) -> Result<DatasetVariation, VariationError> {
    let SelectionRule::LowFreq {
        freq_min,
        freq_max,
        n_total,
    } = spec.rule
    else {
        return Err(VariationError::BadSpec(format!(
            "rule kind mismatch: expected low_freq, got {}",
            spec.rule.kind()
        )));
    };
    if freq_min > freq_max {
        return Err(VariationError::BadSpec(format!(
            "freq_min {freq_min} exceeds freq_max {freq_max}"
        )));
    }
    let index = build_aspect_index(corpus);
    let mut eligible: Vec<(&String, usize)> = index
        .entries
        .iter()
        .map(|(aspect, ids)| (aspect, ids.len()))
        .filter(|&(_, n)| n >= freq_min && n <= freq_max)
        .collect();
    if eligible.is_empty() {
        return Err(VariationError::NoEligibleAspects { freq_min, freq_max });
    }
    eligible.sort_by(|(a_label, a_n), (b_label, b_n)| {
        a_n.cmp(b_n).then_with(|| a_label.cmp(b_label))
    });

    let mut pool = Vec::new();
    let mut log = SelectionLog::default();
    'outer: for (aspect, _) in eligible {
        for id in &index.entries[aspect] {
            if pool.len() == n_total {
                break 'outer;
            }
            let triplet = corpus
                .get(id)
                .expect("aspect index references a corpus id");
            pool.push(triplet.clone());
            *log.counts.entry(aspect.clone()).or_insert(0) += 1;
        }
    }
    if pool.is_empty() {
        return Err(VariationError::EmptyPool);
    }
    split_with_log(pool, spec, log)
}

/// Uniform sample of `min(n_total, |corpus|)` triplets without replacement.
pub fn build_random(
    corpus: &Corpus,
    spec: &VariationSpec,
) -> Result<DatasetVariation, VariationError> {
    let SelectionRule::Random { n_total } = spec.rule else {
        return Err(VariationError::BadSpec(format!(
            "rule kind mismatch: expected random, got {}",
            spec.rule.kind()
        )));
    };
    if n_total == 0 {
        return Err(VariationError::BadSpec("n_total must be positive".into()));
    }
    if corpus.is_empty() {
        return Err(VariationError::EmptyPool);
    }
    let mut rng = rng::seeded(spec.seed, "select");
    let k = n_total.min(corpus.len());
    let chosen = rng::sample_indices(&mut rng, corpus.len(), k);
    let mut pool = Vec::with_capacity(k);
    let mut log = SelectionLog::default();
    for idx in chosen {
        let triplet = corpus.triplets[idx].clone();
        *log.counts.entry(triplet.aspect.clone()).or_insert(0) += 1;
        pool.push(triplet);
    }
    split_with_log(pool, spec, log)
}

/// Shuffles the pool with the spec's seed and cuts it into train/val/test.
/// The pool must cover `train_n + val_n + test_n` unless `allow_truncate`
/// is set, in which case splits fill in train → val → test priority.
pub fn split(pool: Vec<Triplet>, spec: &VariationSpec) -> Result<DatasetVariation, VariationError> {
    let mut log = SelectionLog::default();
    for t in &pool {
        *log.counts.entry(t.aspect.clone()).or_insert(0) += 1;
    }
    split_with_log(pool, spec, log)
}

fn split_with_log(
    mut pool: Vec<Triplet>,
    spec: &VariationSpec,
    selection_log: SelectionLog,
) -> Result<DatasetVariation, VariationError> {
    let need = spec.train_n + spec.val_n + spec.test_n;
    if pool.len() < need && !spec.allow_truncate {
        return Err(VariationError::PoolExhausted {
            need,
            have: pool.len(),
        });
    }
    let mut rng = rng::seeded(spec.seed, "split");
    rng::shuffle(&mut rng, &mut pool);

    let mut rest = pool.into_iter();
    let train: Vec<Triplet> = rest.by_ref().take(spec.train_n).collect();
    let val: Vec<Triplet> = rest.by_ref().take(spec.val_n).collect();
    let test: Vec<Triplet> = rest.by_ref().take(spec.test_n).collect();
    Ok(DatasetVariation {
        name: spec.name.clone(),
        spec: spec.clone(),
        train,
        val,
        test,
        selection_log,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    variation: String,
    seed: u64,
    rng: String,
    spec: VariationSpec,
    selection_log: SelectionLog,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestMember {
    variation: String,
    split: String,
    id: String,
}

/// Writes the variation as a manifest: a header line echoing the spec, the
/// seed, and the PRNG identity, followed by one `{variation, split, id}`
/// line per member in split order. The manifest plus the source corpus are
/// enough to reconstruct the variation exactly.
pub fn write_manifest(
    variation: &DatasetVariation,
    path: &Path,
) -> Result<(), VariationError> {
    let header = serde_json::to_value(ManifestHeader {
        variation: variation.name.clone(),
        seed: variation.spec.seed,
        rng: RNG_ALGORITHM.to_string(),
        spec: variation.spec.clone(),
        selection_log: variation.selection_log.clone(),
    })
    .expect("manifest header serializes");
    let mut lines = vec![header];
    for (split, triplet) in variation.members() {
        lines.push(
            serde_json::to_value(ManifestMember {
                variation: variation.name.clone(),
                split: split.to_string(),
                id: triplet.id.clone(),
            })
            .expect("manifest member serializes"),
        );
    }
    jsonl::write_lines(path, &lines)?;
    Ok(())
}

/// Rebuilds a variation from a manifest and the corpus it was built from.
/// Members resolve by id; domain-wise variations re-annotate each member's
/// domain from the spec's map, so reconstruction matches the original
/// build output field-for-field.
pub fn reconstruct(corpus: &Corpus, path: &Path) -> Result<DatasetVariation, VariationError> {
    let lines: Vec<serde_json::Value> = jsonl::read_lines(path)?;
    let Some((first, rest)) = lines.split_first() else {
        return Err(VariationError::BadManifest("manifest is empty".into()));
    };
    let header: ManifestHeader = serde_json::from_value(first.clone())
        .map_err(|e| VariationError::BadManifest(format!("bad header line: {e}")))?;

    let mut aspect_to_domain: BTreeMap<String, String> = BTreeMap::new();
    if let SelectionRule::DomainWise { domain_map } = &header.spec.rule {
        let map = domain_map.clone().unwrap_or_else(default_domain_map);
        for (domain, aspects) in &map {
            for aspect in aspects {
                aspect_to_domain.insert(aspect.clone(), domain.clone());
            }
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (i, line) in rest.iter().enumerate() {
        let member: ManifestMember = serde_json::from_value(line.clone())
            .map_err(|e| VariationError::BadManifest(format!("bad member line {}: {e}", i + 2)))?;
        let Some(triplet) = corpus.get(&member.id) else {
            return Err(VariationError::MissingId { id: member.id });
        };
        let mut triplet = triplet.clone();
        if let Some(domain) = aspect_to_domain.get(&triplet.aspect) {
            triplet.domain = Some(domain.clone());
        }
        match member.split.as_str() {
            "train" => train.push(triplet),
            "val" => val.push(triplet),
            "test" => test.push(triplet),
            other => {
                return Err(VariationError::BadManifest(format!(
                    "unknown split \"{other}\" on line {}",
                    i + 2
                )))
            }
        }
    }
    Ok(DatasetVariation {
        name: header.variation,
        spec: header.spec,
        train,
        val,
        test,
        selection_log: header.selection_log,
    })
}

/// Checks the three splits share no id; used by tests and by callers that
/// load externally produced manifests.
pub fn splits_disjoint(variation: &DatasetVariation) -> bool {
    let mut seen = BTreeSet::new();
    variation.members().all(|(_, t)| seen.insert(&t.id))
}
