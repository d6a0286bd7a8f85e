//! Randomized-corpus invariant checks for dataset-variation construction,
//! shared by the property-test target and the acceptance suite.
//!
//! For each generated corpus the checks pin:
//! * frequency-ranked selection against an independent brute-force ranking
//!   (count descending, label ascending on ties),
//! * rarity-band selection against a brute-force rarest-first fill, with
//!   every pooled aspect's corpus count inside the band,
//! * pairwise-disjoint train/val/test splits,
//! * byte-identical manifests from two independent builds with one seed,
//! * agreement between serial builds and builds run on spawned threads.

use std::collections::BTreeMap;

use aspect_bench::corpus::{build_aspect_index, Corpus, Triplet};
use aspect_bench::rng::{seeded, uniform_below};
use aspect_bench::variations::{
    build_variation, splits_disjoint, write_manifest, DatasetVariation, SelectionRule,
    VariationSpec,
};
use rand_chacha::ChaCha20Rng;

fn triplet(id: String, aspect: String) -> Triplet {
    Triplet {
        title: format!("Title {id}"),
        document: format!("Document body for {id}. A second sentence for {id}."),
        summary: format!("Summary for {id}."),
        domain: None,
        extra: BTreeMap::new(),
        id,
        aspect,
    }
}

/// Random corpus: 2–12 aspect labels, each with 1–6 documents. The small
/// per-aspect count range makes frequency ties common, which is exactly
/// where ranking bugs hide.
fn random_corpus(rng: &mut ChaCha20Rng) -> Corpus {
    let n_aspects = 2 + uniform_below(rng, 11) as usize;
    let mut triplets = Vec::new();
    let mut seq = 0usize;
    for a in 0..n_aspects {
        let label = format!("aspect{a:02}");
        let count = 1 + uniform_below(rng, 6) as usize;
        for _ in 0..count {
            triplets.push(triplet(format!("doc{seq:04}"), label.clone()));
            seq += 1;
        }
    }
    Corpus {
        triplets,
        source_path: None,
    }
}

/// Splits `(train, val, test)` that exactly cover a pool of `n` members.
fn covering_splits(n: usize) -> (usize, usize, usize) {
    let q = n / 4;
    (n - 2 * q, q, q)
}

fn spec(name: &str, rule: SelectionRule, pool: usize, seed: u64) -> VariationSpec {
    let (train_n, val_n, test_n) = covering_splits(pool);
    VariationSpec {
        name: name.to_string(),
        rule,
        train_n,
        val_n,
        test_n,
        seed,
        allow_truncate: false,
    }
}

fn member_ids(variation: &DatasetVariation) -> Vec<(&'static str, String)> {
    variation
        .members()
        .map(|(split, t)| (split, t.id.clone()))
        .collect()
}

fn assert_split_invariants(variation: &DatasetVariation, corpus_label: &str) {
    assert!(
        splits_disjoint(variation),
        "{corpus_label}: an id appears in more than one split"
    );
    assert_eq!(
        variation.train.len(),
        variation.spec.train_n,
        "{corpus_label}: train size"
    );
    assert_eq!(variation.val.len(), variation.spec.val_n, "{corpus_label}: val size");
    assert_eq!(variation.test.len(), variation.spec.test_n, "{corpus_label}: test size");
}

/// Build twice (same seed), require identical members and byte-identical
/// manifests; build again on a spawned thread and require agreement with
/// the serial result.
fn assert_reproducible(corpus: &Corpus, spec: &VariationSpec, corpus_label: &str) {
    let serial = build_variation(corpus, spec).expect("serial build");
    let again = build_variation(corpus, spec).expect("second serial build");
    assert_eq!(
        member_ids(&serial),
        member_ids(&again),
        "{corpus_label}: same seed must reproduce the same members"
    );

    let dir = tempfile::tempdir().expect("tempdir");
    let first_path = dir.path().join("first.jsonl");
    let second_path = dir.path().join("second.jsonl");
    write_manifest(&serial, &first_path).expect("first manifest");
    write_manifest(&again, &second_path).expect("second manifest");
    let first = std::fs::read(&first_path).expect("read first manifest");
    let second = std::fs::read(&second_path).expect("read second manifest");
    assert_eq!(
        first, second,
        "{corpus_label}: manifests from identical seeds must be byte-identical"
    );

    let threads: Vec<_> = (0..2)
        .map(|_| {
            let corpus = corpus.clone();
            let spec = spec.clone();
            std::thread::spawn(move || {
                let built = build_variation(&corpus, &spec).expect("threaded build");
                built
                    .members()
                    .map(|(split, t)| (split, t.id.clone()))
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    for handle in threads {
        let threaded = handle.join().expect("builder thread");
        assert_eq!(
            member_ids(&serial),
            threaded,
            "{corpus_label}: threaded build diverged from serial"
        );
    }
}

/// Brute-force frequency ranking: count descending, label ascending.
fn brute_force_top_aspects(corpus: &Corpus, n_aspects: usize) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &corpus.triplets {
        *counts.entry(t.aspect.clone()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|(a_label, a_n), (b_label, b_n)| b_n.cmp(a_n).then(a_label.cmp(b_label)));
    ranked.truncate(n_aspects);
    ranked
}

fn check_high_freq(corpus: &Corpus, rng: &mut ChaCha20Rng, corpus_label: &str) {
    let index = build_aspect_index(corpus);
    let n_aspects = 1 + uniform_below(rng, index.entries.len() as u64) as usize;
    let docs_per_aspect = 1 + uniform_below(rng, 5) as usize;
    let expected: Vec<(String, usize)> = brute_force_top_aspects(corpus, n_aspects)
        .into_iter()
        .map(|(aspect, available)| (aspect, docs_per_aspect.min(available)))
        .collect();
    let pool: usize = expected.iter().map(|(_, k)| k).sum();
    let seed = uniform_below(rng, 1_000_000);

    let spec = spec(
        "hf",
        SelectionRule::HighFreq {
            n_aspects,
            docs_per_aspect,
        },
        pool,
        seed,
    );
    let built = build_variation(corpus, &spec).expect("high-freq build");
    assert_split_invariants(&built, corpus_label);

    let mut logged: Vec<(String, usize)> = built
        .selection_log
        .counts
        .iter()
        .map(|(a, n)| (a.clone(), *n))
        .collect();
    // The log is keyed by aspect; re-rank it the brute-force way to compare.
    logged.sort_by(|(a_label, _), (b_label, _)| {
        let a_avail = index.count(a_label);
        let b_avail = index.count(b_label);
        b_avail.cmp(&a_avail).then(a_label.cmp(b_label))
    });
    assert_eq!(
        logged, expected,
        "{corpus_label}: frequency ranking diverged from brute force \
         (n_aspects={n_aspects}, docs_per_aspect={docs_per_aspect})"
    );

    // Every member belongs to a selected aspect, and per-aspect member
    // counts match the log.
    let mut member_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, t) in built.members() {
        *member_counts.entry(t.aspect.as_str()).or_insert(0) += 1;
    }
    for (aspect, count) in &member_counts {
        let expected_count = expected
            .iter()
            .find(|(a, _)| a == aspect)
            .map(|(_, k)| *k)
            .unwrap_or_else(|| {
                panic!("{corpus_label}: member aspect {aspect} was never selected")
            });
        assert_eq!(*count, expected_count, "{corpus_label}: count for {aspect}");
    }
}

/// Brute-force rarest-first fill: eligible aspects sorted by count
/// ascending (label ascending on ties), whole aspects appended until the
/// cap cuts one off.
fn brute_force_band_fill(
    corpus: &Corpus,
    freq_min: usize,
    freq_max: usize,
    n_total: usize,
) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &corpus.triplets {
        *counts.entry(t.aspect.clone()).or_insert(0) += 1;
    }
    let mut eligible: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= freq_min && n <= freq_max)
        .collect();
    eligible.sort_by(|(a_label, a_n), (b_label, b_n)| a_n.cmp(b_n).then(a_label.cmp(b_label)));
    let mut fill = BTreeMap::new();
    let mut taken = 0usize;
    for (aspect, n) in eligible {
        if taken == n_total {
            break;
        }
        let k = n.min(n_total - taken);
        fill.insert(aspect, k);
        taken += k;
    }
    fill
}

fn check_low_freq(corpus: &Corpus, rng: &mut ChaCha20Rng, corpus_label: &str) {
    let index = build_aspect_index(corpus);
    let observed: Vec<usize> = index.entries.values().map(Vec::len).collect();
    let min_count = *observed.iter().min().expect("non-empty corpus");
    let max_count = *observed.iter().max().expect("non-empty corpus");
    // Anchor the band at the rarest observed count so it is never empty.
    let freq_min = min_count;
    let freq_max = min_count + uniform_below(rng, (max_count - min_count + 1) as u64) as usize;
    let eligible_total: usize = index
        .entries
        .values()
        .map(Vec::len)
        .filter(|n| *n >= freq_min && *n <= freq_max)
        .sum();
    let n_total = 1 + uniform_below(rng, eligible_total as u64) as usize;
    let expected = brute_force_band_fill(corpus, freq_min, freq_max, n_total);
    let pool: usize = expected.values().sum();
    assert_eq!(pool, n_total.min(eligible_total));

    let spec = spec(
        "lf",
        SelectionRule::LowFreq {
            freq_min,
            freq_max,
            n_total,
        },
        pool,
        uniform_below(rng, 1_000_000),
    );
    let built = build_variation(corpus, &spec).expect("low-freq build");
    assert_split_invariants(&built, corpus_label);

    for (_, t) in built.members() {
        let count = index.count(&t.aspect);
        assert!(
            (freq_min..=freq_max).contains(&count),
            "{corpus_label}: member aspect {} has corpus count {count}, outside \
             [{freq_min}, {freq_max}]",
            t.aspect
        );
    }
    assert_eq!(
        built.selection_log.counts, expected,
        "{corpus_label}: band fill diverged from brute force \
         (band [{freq_min}, {freq_max}], cap {n_total})"
    );
}

fn check_random(corpus: &Corpus, rng: &mut ChaCha20Rng, corpus_label: &str) {
    let n_total = 1 + uniform_below(rng, corpus.len() as u64) as usize;
    let spec = spec(
        "rnd",
        SelectionRule::Random { n_total },
        n_total,
        uniform_below(rng, 1_000_000),
    );
    let built = build_variation(corpus, &spec).expect("random build");
    assert_split_invariants(&built, corpus_label);
    let members: Vec<_> = built.members().collect();
    assert_eq!(members.len(), n_total);
    for (_, t) in &members {
        assert!(
            corpus.get(&t.id).is_some(),
            "{corpus_label}: sampled id {} is not in the corpus",
            t.id
        );
    }
}

/// Runs every invariant over `n_corpora` generated corpora; returns a
/// one-line summary. Panics (with the corpus seed in the message) on any
/// violation.
pub fn check_variation_invariants(n_corpora: usize) -> String {
    let mut reproducibility_checks = 0;
    for i in 0..n_corpora {
        let corpus_label = format!("corpus #{i}");
        let mut rng = seeded(0xDA7A, &format!("variation-corpus-{i}"));
        let corpus = random_corpus(&mut rng);

        check_high_freq(&corpus, &mut rng, &corpus_label);
        check_low_freq(&corpus, &mut rng, &corpus_label);
        check_random(&corpus, &mut rng, &corpus_label);

        // Manifest byte-identity and threaded-vs-serial agreement, rotating
        // through the three randomized rules.
        let index = build_aspect_index(&corpus);
        let rule = match i % 3 {
            0 => {
                let n_aspects = 1 + (i % index.entries.len());
                SelectionRule::HighFreq {
                    n_aspects,
                    docs_per_aspect: 2,
                }
            }
            1 => {
                let max = index.entries.values().map(Vec::len).max().unwrap();
                SelectionRule::LowFreq {
                    freq_min: 1,
                    freq_max: max,
                    n_total: corpus.len(),
                }
            }
            _ => SelectionRule::Random {
                n_total: corpus.len(),
            },
        };
        let probe = VariationSpec {
            name: "probe".into(),
            rule,
            train_n: 0,
            val_n: 0,
            test_n: 0,
            seed: 31 + i as u64,
            allow_truncate: true,
        };
        // Size the splits to the actual pool this rule yields.
        let pool = build_variation(&corpus, &probe)
            .expect("probe build")
            .selection_log
            .counts
            .values()
            .sum::<usize>();
        let spec = spec("repro", probe.rule.clone(), pool, probe.seed);
        assert_reproducible(&corpus, &spec, &corpus_label);
        reproducibility_checks += 1;
    }
    format!(
        "{n_corpora} corpora x 3 rules vs brute force; {reproducibility_checks} \
         byte-identical manifest + threaded-build checks"
    )
}
