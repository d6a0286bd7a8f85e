//! Loader and checker for the frozen judge-reply suite in
//! `fixtures/judge-replies.jsonl`: 25 real-world reply shapes with the
//! exact parse each must produce — values for parseable replies, a precise
//! error variant otherwise. Out-of-range values must error, never clamp.

use aspect_bench::critique::{parse_scores, ParseError, SCORED_CRITERIA};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct ReplyCase {
    pub name: String,
    pub reply: String,
    #[serde(default)]
    pub expect_ok: Option<Vec<f64>>,
    #[serde(default)]
    pub expect_err: Option<ExpectedError>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedError {
    NoScores,
    WrongCount { expected: usize, found: usize },
    OutOfRange { value: String },
    MissingLabel { label: usize },
    UnexpectedLabel { label: usize },
    ConflictingLabel { label: usize },
}

impl ExpectedError {
    pub fn to_parse_error(&self) -> ParseError {
        match self {
            Self::NoScores => ParseError::NoScores,
            Self::WrongCount { expected, found } => ParseError::WrongCount {
                expected: *expected,
                found: *found,
            },
            Self::OutOfRange { value } => ParseError::OutOfRange {
                value: value.clone(),
            },
            Self::MissingLabel { label } => ParseError::MissingLabel { label: *label },
            Self::UnexpectedLabel { label } => ParseError::UnexpectedLabel { label: *label },
            Self::ConflictingLabel { label } => ParseError::ConflictingLabel { label: *label },
        }
    }
}

pub fn load_cases() -> Vec<ReplyCase> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/judge-replies.jsonl");
    let text = std::fs::read_to_string(path).expect("judge-replies fixture readable");
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).expect("judge-replies fixture line parses"))
        .collect()
}

/// Runs the parser over every fixture case and asserts the exact outcome.
/// Returns `(parsed_ok, errored)` counts for reporting.
pub fn verify_all() -> (usize, usize) {
    let cases = load_cases();
    let mut ok_count = 0;
    let mut err_count = 0;
    for case in &cases {
        let result = parse_scores(&case.reply, SCORED_CRITERIA);
        match (&case.expect_ok, &case.expect_err) {
            (Some(expected), None) => {
                let values = result.unwrap_or_else(|e| {
                    panic!("case {}: expected scores, got error {e}", case.name)
                });
                assert_eq!(
                    &values, expected,
                    "case {}: parsed values differ from the frozen expectation",
                    case.name
                );
                assert_eq!(values.len(), SCORED_CRITERIA, "case {}", case.name);
                for v in &values {
                    assert!(
                        (0.0..=1.0).contains(v),
                        "case {}: parsed value {v} escaped [0,1]",
                        case.name
                    );
                }
                ok_count += 1;
            }
            (None, Some(expected)) => {
                let err = match result {
                    Err(e) => e,
                    Ok(values) => panic!(
                        "case {}: expected an error, parser silently produced {values:?}",
                        case.name
                    ),
                };
                assert_eq!(
                    err,
                    expected.to_parse_error(),
                    "case {}: wrong error variant",
                    case.name
                );
                err_count += 1;
            }
            _ => panic!(
                "case {}: fixture must set exactly one of expect_ok / expect_err",
                case.name
            ),
        }
    }
    (ok_count, err_count)
}
