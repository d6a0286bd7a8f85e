//! Benchmarking harness for aspect-based summarization.
//!
//! The pipeline mirrors a complete evaluation campaign over a corpus of
//! document–aspect–reference-summary triplets:
//!
//! 1. [`corpus`] — load/validate the line-delimited corpus interchange format
//!    and build aspect/domain frequency indexes.
//! 2. [`variations`] — carve the corpus into named, seeded dataset variations
//!    (domain-wise, high-frequency, low-frequency, random) with
//!    train/val/test splits and auditable manifests.
//! 3. [`prompts`] — render the canonical inference and critique prompts and
//!    export supervised fine-tuning pairs.
//! 4. [`inference`] — generate candidate summaries from pluggable backends:
//!    deterministic local baselines for offline runs, or any
//!    chat-completions endpoint for real models.
//! 5. [`metrics`] — score candidates against references with from-scratch
//!    ROUGE-1/2/L, BLEU, METEOR, and BERTScore implementations.
//! 6. [`critique`] — run the four-criteria LLM-as-judge protocol, parse the
//!    judge's replies, and derive the good/not-good verdict.
//! 7. [`report`] — aggregate per-item scores into model × variation tables
//!    (markdown/csv) plus a plot-ready long-format csv.
//!
//! [`config`] defines the TOML run configuration shared by the CLI stages and
//! [`pipeline`] wires the stages together over a self-describing run
//! directory with idempotent resume. Every stage is a pure function of its
//! inputs plus a named seed stream ([`rng`]), so a whole run is reproducible
//! byte-for-byte (measured latencies excepted) on any machine.

pub mod config;
pub mod corpus;
pub mod critique;
pub mod inference;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod report;
pub mod rng;
pub mod variations;

/// Tool version embedded in reports and audit records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
