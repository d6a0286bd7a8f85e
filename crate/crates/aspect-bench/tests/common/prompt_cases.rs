//! The frozen inputs behind the prompt golden fixtures, shared by the golden
//! test target and the acceptance suite.
//!
//! The fixture files under `fixtures/prompts/` are the normative renderings
//! for ten frozen inputs. They were composed by hand from the frozen template
//! texts — not generated by running the renderer — so checks against them
//! genuinely pin the renderer to an independent source. Each fixture stores
//! `system + "\n<<<USER>>>\n" + user + "\n"`.

use std::collections::BTreeMap;

use aspect_bench::corpus::Triplet;
use aspect_bench::prompts::{render_critique, render_inference, RenderedPrompt};

fn triplet(aspect: &str, document: &str, summary: &str) -> Triplet {
    Triplet {
        id: "golden".to_string(),
        title: "Golden".to_string(),
        document: document.to_string(),
        aspect: aspect.to_string(),
        summary: summary.to_string(),
        domain: None,
        extra: BTreeMap::new(),
    }
}

fn fixture(name: &str) -> String {
    let path = format!(
        "{}/fixtures/prompts/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"))
}

fn flatten(p: &RenderedPrompt) -> String {
    format!("{}\n<<<USER>>>\n{}\n", p.system, p.user)
}

fn assert_matches_fixture(rendered: &RenderedPrompt, fixture_name: &str) {
    let expected = fixture(fixture_name);
    let actual = flatten(rendered);
    if actual != expected {
        // Locate the first differing byte so a failure is diagnosable
        // without dumping two near-identical walls of text.
        let pos = actual
            .bytes()
            .zip(expected.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| actual.len().min(expected.len()));
        let lo = pos.saturating_sub(40);
        panic!(
            "rendered prompt diverges from {fixture_name} at byte {pos}:\n  \
             rendered: {:?}\n  fixture:  {:?}",
            &actual[lo..(pos + 40).min(actual.len())],
            &expected[lo..(pos + 40).min(expected.len())],
        );
    }
}

struct InferenceCase {
    fixture: &'static str,
    aspect: &'static str,
    document: &'static str,
}

const INFERENCE_CASES: &[InferenceCase] = &[
    InferenceCase {
        fixture: "g01-inference.txt",
        aspect: "History",
        document: "The town was founded in 1801. It grew quickly around the river mill.",
    },
    InferenceCase {
        // A document containing a literal placeholder token: substitution is
        // single-pass, so `{aspect}` inside the value must survive untouched.
        fixture: "g02-inference.txt",
        aspect: "Early life",
        document: "Born in Prague, she moved often. Her father taught {aspect} theory at night.",
    },
    InferenceCase {
        // Non-ASCII content: en dash and accented words pass through.
        fixture: "g03-inference.txt",
        aspect: "Production",
        document: "Recording began in a rented barn \u{2013} cheap, cold, and loud. \
                   The crew mixed cr\u{e8}me br\u{fb}l\u{e9}e jokes into the liner notes.",
    },
    InferenceCase {
        fixture: "g04-inference.txt",
        aspect: "Taxonomy",
        document: "The genus contains four accepted species. Two subspecies were merged \
                   in 1998. A revision is pending. Field keys rely on leaf shape.",
    },
    InferenceCase {
        fixture: "g05-inference.txt",
        aspect: "Political Career",
        document: "He lost the 1970 primary. He won the seat in 1974 and held it for a decade.",
    },
];

struct CritiqueCase {
    fixture: &'static str,
    aspect: &'static str,
    document: &'static str,
    reference: &'static str,
    generated: &'static str,
    aspect_set: &'static [&'static str],
}

const CRITIQUE_CASES: &[CritiqueCase] = &[
    CritiqueCase {
        fixture: "g06-critique.txt",
        aspect: "Death",
        document: "The patient declined through winter. Care shifted to comfort measures in May.",
        reference: "He died at home in June, aged 81.",
        generated: "He died peacefully at home in June.",
        aspect_set: &[
            "Death",
            "Diagnosis",
            "Differential diagnosis",
            "Diagnosis-Classification",
        ],
    },
    CritiqueCase {
        // Singleton aspect set: the complement clause renders the word "none".
        fixture: "g07-critique.txt",
        aspect: "Soundtrack",
        document: "The score uses three motifs. Each motif ties to a location.",
        reference: "Three motifs anchor the score.",
        generated: "The score has three motifs.",
        aspect_set: &["Soundtrack"],
    },
    CritiqueCase {
        fixture: "g08-critique.txt",
        aspect: "Production",
        document: "Filming wrapped after forty days. The budget doubled when the set \
                   flooded. Critics later praised the practical effects.",
        reference: "Filming took forty days and the budget doubled after a flood.",
        generated: "The film was shot in forty days on a doubled budget.",
        aspect_set: &["Production", "Plot", "Release", "Reception"],
    },
    CritiqueCase {
        // A duplicated aspect in the set: the complement deduplicates while
        // preserving first-appearance order ("Career, Philanthropy").
        fixture: "g09-critique.txt",
        aspect: "Personal Life",
        document: "She kept a small farm outside the city. Weekends were for her garden \
                   and her nieces.",
        reference: "She spent her private time farming and with family.",
        generated: "Her private life centered on the farm and her family.",
        aspect_set: &["Career", "Personal Life", "Career", "Philanthropy"],
    },
    CritiqueCase {
        // A generated summary containing a literal placeholder token plus
        // accented characters: both must pass through substitution unchanged.
        fixture: "g10-critique.txt",
        aspect: "Geography",
        document: "The village sits on a limestone ridge above the river. A caf\u{e9} on \
                   the square marks its centre.",
        reference: "The village lies on a ridge above the river, centred on a caf\u{e9}.",
        generated: "The village is on a ridge by the river; see {reference_summary} for \
                    the caf\u{e9} note.",
        aspect_set: &["History", "Geography"],
    },
];

/// Renders every frozen inference input and asserts byte-identity with its
/// fixture. Returns how many cases were checked.
pub fn verify_inference_cases() -> usize {
    for case in INFERENCE_CASES {
        let t = triplet(case.aspect, case.document, "unused reference");
        let rendered = render_inference(&t)
            .unwrap_or_else(|e| panic!("{}: render failed: {e}", case.fixture));
        assert_matches_fixture(&rendered, case.fixture);
    }
    INFERENCE_CASES.len()
}

/// Renders every frozen critique input and asserts byte-identity with its
/// fixture. Returns how many cases were checked.
pub fn verify_critique_cases() -> usize {
    for case in CRITIQUE_CASES {
        let t = triplet(case.aspect, case.document, case.reference);
        let aspect_set: Vec<String> = case.aspect_set.iter().map(|s| s.to_string()).collect();
        let rendered = render_critique(&t, case.generated, &aspect_set)
            .unwrap_or_else(|e| panic!("{}: render failed: {e}", case.fixture));
        assert_matches_fixture(&rendered, case.fixture);
    }
    CRITIQUE_CASES.len()
}

/// Asserts the fixture corpus is complete: five inference + five critique
/// files, all present and readable. A missing file should fail loudly here
/// rather than silently shrinking coverage.
pub fn assert_fixture_files_present() {
    assert_eq!(INFERENCE_CASES.len(), 5);
    assert_eq!(CRITIQUE_CASES.len(), 5);
    for case in INFERENCE_CASES {
        fixture(case.fixture);
    }
    for case in CRITIQUE_CASES {
        fixture(case.fixture);
    }
}
