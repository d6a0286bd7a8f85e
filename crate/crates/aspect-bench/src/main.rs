//! Command-line entry point: one subcommand per pipeline stage plus a
//! composite `run`, with global overrides for config path, seed,
//! parallelism, and output directory.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error,
//! 3 backend/network error (and composite runs that finished with
//! per-item failures — resume retries those items).

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use aspect_bench::config::{ConfigError, RunConfig};
use aspect_bench::corpus::{self, format_stats};
use aspect_bench::critique::import_manual_labels;
use aspect_bench::pipeline::{
    build_backend, build_judge, ingest_corpus, load_or_build_variation, persist_config,
    rebuild_variations, run_all, stage_critique, stage_export_sft, stage_generate, stage_report,
    stage_score, PipelineError, RunPaths,
};
use aspect_bench::report::{render_table, GroupBy, TableFormat};

#[derive(Parser)]
#[command(
    name = "aspect-bench",
    version,
    about = "Benchmark harness for aspect-based summarization",
    propagate_version = true
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true, default_value = "aspect-bench.toml", value_name = "FILE")]
    config: PathBuf,

    /// Override the configured global random seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the configured worker parallelism.
    #[arg(long, global = true, value_name = "N")]
    parallelism: Option<usize>,

    /// Override the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize an external JSONL corpus into the
    /// interchange format, printing corpus statistics.
    Ingest {
        /// Source JSONL file.
        input: PathBuf,
        /// Destination for the normalized corpus.
        output: PathBuf,
        /// Skip malformed lines (counted) instead of failing on the first.
        #[arg(long)]
        lenient: bool,
        /// Rename a source key before parsing, e.g. --map text=document.
        /// May be given several times.
        #[arg(long = "map", value_name = "SRC=DST", value_parser = parse_key_map)]
        map: Vec<(String, String)>,
    },

    /// Print statistics for a corpus in the interchange format.
    Stats {
        /// Corpus to describe; defaults to the configured corpus.
        corpus: Option<PathBuf>,
    },

    /// Build every configured dataset variation and persist manifests
    /// (overwrites existing manifests).
    BuildVariations,

    /// Export train splits as prompt/completion pairs for fine-tuning.
    ExportSft(VariationArg),

    /// Generate candidate summaries for a variation's test split.
    Generate(VariationArg),

    /// Score generated summaries against references with all metrics.
    Score(VariationArg),

    /// Judge generated summaries against the scoring rubric.
    Critique {
        #[command(flatten)]
        variation: VariationArg,
        /// CSV of `id,good|not-good` rows overriding derived goodness.
        #[arg(long, value_name = "FILE")]
        manual_labels: Option<PathBuf>,
    },

    /// Aggregate persisted scores and critiques into report files.
    Report {
        #[command(flatten)]
        variation: VariationArg,
        /// Additional grouping for report rows.
        #[arg(long, value_enum, default_value_t = GroupByArg::None)]
        group_by: GroupByArg,
    },

    /// Run generate, score, critique, and report end to end. Resumable:
    /// completed items are reused, failed items are retried.
    Run {
        /// Variation to run; defaults to every configured variation.
        #[arg(long, value_name = "NAME")]
        variation: Option<String>,
        /// Additional grouping for report rows.
        #[arg(long, value_enum, default_value_t = GroupByArg::None)]
        group_by: GroupByArg,
        /// CSV of `id,good|not-good` rows overriding derived goodness.
        #[arg(long, value_name = "FILE")]
        manual_labels: Option<PathBuf>,
    },
}

#[derive(Args)]
struct VariationArg {
    /// Variation to operate on; may be omitted when only one is configured.
    #[arg(long, value_name = "NAME")]
    variation: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupByArg {
    None,
    Domain,
    Aspect,
}

impl From<GroupByArg> for GroupBy {
    fn from(arg: GroupByArg) -> Self {
        match arg {
            GroupByArg::None => GroupBy::None,
            GroupByArg::Domain => GroupBy::Domain,
            GroupByArg::Aspect => GroupBy::Aspect,
        }
    }
}

fn parse_key_map(raw: &str) -> Result<(String, String), String> {
    match raw.split_once('=') {
        Some((src, dst)) if !src.is_empty() && !dst.is_empty() => {
            Ok((src.to_string(), dst.to_string()))
        }
        _ => Err(format!("expected SRC=DST, got \"{raw}\"")),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut config = RunConfig::load(&cli.config)?;
    config.apply_overrides(cli.seed, cli.parallelism, cli.out.clone());
    config.validate()?;
    Ok(config)
}

fn pick_variation(config: &RunConfig, requested: &Option<String>) -> Result<String, PipelineError> {
    match requested {
        Some(name) => Ok(name.clone()),
        None if config.variations.len() == 1 => Ok(config.variations[0].name.clone()),
        None => {
            let names: Vec<&str> = config.variations.iter().map(|v| v.name.as_str()).collect();
            Err(PipelineError::Config(ConfigError::Invalid(format!(
                "--variation is required when several are configured ({})",
                names.join(", ")
            ))))
        }
    }
}

fn read_manual(path: &Option<PathBuf>) -> Result<Option<BTreeMap<String, bool>>, PipelineError> {
    match path {
        Some(path) => Ok(Some(import_manual_labels(path)?)),
        None => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<i32, PipelineError> {
    match &cli.command {
        Command::Ingest {
            input,
            output,
            lenient,
            map,
        } => {
            let rename: BTreeMap<String, String> = map.iter().cloned().collect();
            let outcome = ingest_corpus(input, output, *lenient, &rename)?;
            print!("{}", format_stats(&outcome.stats));
            println!(
                "wrote {} triplets to {} ({} lines skipped)",
                outcome.written,
                output.display(),
                outcome.skipped
            );
            Ok(0)
        }

        Command::Stats { corpus } => {
            let corpus = match corpus {
                Some(path) => corpus::load_corpus(path)?,
                None => corpus::load_corpus(&load_config(&cli)?.corpus)?,
            };
            print!("{}", format_stats(&corpus::corpus_stats(&corpus)));
            Ok(0)
        }

        Command::BuildVariations => {
            let config = load_config(&cli)?;
            let corpus = corpus::load_corpus(&config.corpus)?;
            let paths = RunPaths::new(&config.out_dir);
            for variation in rebuild_variations(&config, &corpus, &paths)? {
                println!(
                    "built {}: {} train / {} val / {} test -> {}",
                    variation.name,
                    variation.train.len(),
                    variation.val.len(),
                    variation.test.len(),
                    paths.manifest(&variation.name).display()
                );
            }
            Ok(0)
        }

        Command::ExportSft(arg) => {
            let config = load_config(&cli)?;
            let corpus = corpus::load_corpus(&config.corpus)?;
            let paths = RunPaths::new(&config.out_dir);
            let names: Vec<String> = match &arg.variation {
                Some(name) => vec![name.clone()],
                None => config.variations.iter().map(|v| v.name.clone()).collect(),
            };
            for name in names {
                let variation = load_or_build_variation(&config, &corpus, &name, &paths)?;
                let (count, path) = stage_export_sft(&variation, &paths)?;
                println!("exported {count} pairs to {}", path.display());
            }
            Ok(0)
        }

        Command::Generate(arg) => {
            let config = load_config(&cli)?;
            let name = pick_variation(&config, &arg.variation)?;
            let corpus = corpus::load_corpus(&config.corpus)?;
            let paths = RunPaths::new(&config.out_dir);
            let variation = load_or_build_variation(&config, &corpus, &name, &paths)?;
            persist_config(&config, &paths, &name)?;
            let backend = build_backend(&config, &paths, &name)?;
            let (records, failures) =
                stage_generate(&config, backend.as_ref(), &variation, &paths)?;
            println!(
                "generated {} summaries ({failures} failed) for {name}",
                records.len()
            );
            Ok(if failures > 0 { 3 } else { 0 })
        }

        Command::Score(arg) => {
            let config = load_config(&cli)?;
            let name = pick_variation(&config, &arg.variation)?;
            let corpus = corpus::load_corpus(&config.corpus)?;
            let paths = RunPaths::new(&config.out_dir);
            let variation = load_or_build_variation(&config, &corpus, &name, &paths)?;
            persist_config(&config, &paths, &name)?;
            let records = stage_score(&config, &variation, &paths)?;
            println!("scored {} summaries for {name}", records.len());
            Ok(0)
        }

        Command::Critique {
            variation,
            manual_labels,
        } => {
            let config = load_config(&cli)?;
            let name = pick_variation(&config, &variation.variation)?;
            let manual = read_manual(manual_labels)?;
            let corpus = corpus::load_corpus(&config.corpus)?;
            let paths = RunPaths::new(&config.out_dir);
            let variation = load_or_build_variation(&config, &corpus, &name, &paths)?;
            persist_config(&config, &paths, &name)?;
            let judge = build_judge(&config, &paths, &name)?;
            let (records, failures) =
                stage_critique(&config, judge.as_ref(), &variation, &paths, manual.as_ref())?;
            println!(
                "critiqued {} summaries ({failures} failed) for {name}",
                records.len()
            );
            Ok(if failures > 0 { 3 } else { 0 })
        }

        Command::Report {
            variation,
            group_by,
        } => {
            let config = load_config(&cli)?;
            let name = pick_variation(&config, &variation.variation)?;
            let corpus = corpus::load_corpus(&config.corpus)?;
            let paths = RunPaths::new(&config.out_dir);
            let variation = load_or_build_variation(&config, &corpus, &name, &paths)?;
            persist_config(&config, &paths, &name)?;
            let reports = stage_report(&config, &variation, &paths, (*group_by).into())?;
            print!("{}", render_table(&reports, TableFormat::Markdown)?);
            Ok(0)
        }

        Command::Run {
            variation,
            group_by,
            manual_labels,
        } => {
            let config = load_config(&cli)?;
            let manual = read_manual(manual_labels)?;
            let names: Vec<String> = match variation {
                Some(name) => vec![name.clone()],
                None => config.variations.iter().map(|v| v.name.clone()).collect(),
            };
            if names.is_empty() {
                return Err(PipelineError::Config(ConfigError::Invalid(
                    "no variations configured".to_string(),
                )));
            }
            let mut total_failures = 0usize;
            for name in &names {
                let summary = run_all(&config, name, (*group_by).into(), manual.as_ref())?;
                println!(
                    "[run] {} / {}: {} test items, {} generation failures, {} critique failures",
                    summary.variation,
                    summary.model_name,
                    summary.n_test_items,
                    summary.generation_failures,
                    summary.critique_failures
                );
                println!("[run] report: {}", summary.report_md.display());
                total_failures += summary.generation_failures + summary.critique_failures;
            }
            if total_failures > 0 {
                eprintln!(
                    "{total_failures} items failed and carry error markers; \
                     re-running retries exactly those items"
                );
                return Ok(3);
            }
            Ok(0)
        }
    }
}
