//! Aggregates per-item metric and critique scores into result tables:
//! grouped means, markdown/csv rendering, model-vs-baseline comparison,
//! and a plot-ready long-format csv.
//!
//! Metric rows and critique rows are joined 1:1 by id — an id present on
//! only one side is an error, so upstream stages must emit a critique
//! marker row even for items whose critique failed. Items without usable
//! critique scores still contribute to the metric means but are excluded
//! from (and counted against) the critique means.
//!
//! Every mean is item-weighted. In grouped reports the trailing "Average"
//! row is the mean over all items, not the mean of the group means, so
//! groups of unequal size are weighted by their item counts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::critique::CritiqueRecord;
use crate::metrics::MetricScores;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no rows to aggregate")]
    EmptyInput,
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("metric and critique rows do not join: {0}")]
    JoinMismatch(String),
    #[error("grouping by {group} requires a label on every row; missing for: {ids}")]
    MissingGroupLabel { group: String, ids: String },
    #[error("no reports to render")]
    NoReports,
    #[error("baseline model \"{0}\" not found among reports")]
    UnknownBaseline(String),
    #[error("baseline \"{baseline}\" has no row for variation \"{variation}\", group \"{group}\"")]
    BaselineCellMissing {
        baseline: String,
        variation: String,
        group: String,
    },
}

/// One evaluated item with the labels grouping can key on.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub domain: Option<String>,
    pub aspect: String,
    pub scores: MetricScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    None,
    Domain,
    Aspect,
}

/// Mean critique scores ×100, over the items that were actually scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritiqueMeans {
    pub re: f64,
    pub cv: f64,
    pub im: f64,
    pub ra: f64,
}

/// One aggregated result row. `group_key` is `Some(label)` for a group
/// row and `None` for the all-items row (rendered as "Average" in grouped
/// tables). `critique_means` and `gd_percent` are `None` when no item in
/// the row carried critique scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub variation_name: String,
    pub group_key: Option<String>,
    pub means: MetricScores,
    pub critique_means: Option<CritiqueMeans>,
    pub gd_percent: Option<f64>,
    pub n_items: usize,
    pub n_critiqued: usize,
    pub config_digest: String,
}

/// Identifies where aggregated rows came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext {
    pub model_name: String,
    pub variation_name: String,
    pub config_digest: String,
}

fn scored(record: &CritiqueRecord) -> Option<(f64, f64, f64, f64, Option<&str>)> {
    match (record.re, record.cv, record.im, record.ra) {
        (Some(re), Some(cv), Some(im), Some(ra)) => {
            Some((re, cv, im, ra, record.gd.as_deref()))
        }
        _ => None,
    }
}

fn build_report(
    ctx: &ReportContext,
    group_key: Option<String>,
    rows: &[&MetricRow],
    critique_by_id: &BTreeMap<&str, &CritiqueRecord>,
) -> EvalReport {
    let n = rows.len() as f64;
    let mean_of = |f: fn(&MetricScores) -> f64| rows.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
    let means = MetricScores {
        r1: mean_of(|s| s.r1),
        r2: mean_of(|s| s.r2),
        rl: mean_of(|s| s.rl),
        mt: mean_of(|s| s.mt),
        bl: mean_of(|s| s.bl),
        bert_p: mean_of(|s| s.bert_p),
        bert_r: mean_of(|s| s.bert_r),
        bert_f1: mean_of(|s| s.bert_f1),
    };

    let mut sums = (0.0, 0.0, 0.0, 0.0);
    let mut n_critiqued = 0usize;
    let mut n_good = 0usize;
    for row in rows {
        let record = critique_by_id
            .get(row.id.as_str())
            .expect("join validated before grouping");
        if let Some((re, cv, im, ra, gd)) = scored(record) {
            n_critiqued += 1;
            sums.0 += re;
            sums.1 += cv;
            sums.2 += im;
            sums.3 += ra;
            if gd == Some("good") {
                n_good += 1;
            }
        }
    }
    let (critique_means, gd_percent) = if n_critiqued > 0 {
        let nc = n_critiqued as f64;
        (
            Some(CritiqueMeans {
                re: 100.0 * sums.0 / nc,
                cv: 100.0 * sums.1 / nc,
                im: 100.0 * sums.2 / nc,
                ra: 100.0 * sums.3 / nc,
            }),
            Some(100.0 * n_good as f64 / nc),
        )
    } else {
        (None, None)
    };

    EvalReport {
        model_name: ctx.model_name.clone(),
        variation_name: ctx.variation_name.clone(),
        group_key,
        means,
        critique_means,
        gd_percent,
        n_items: rows.len(),
        n_critiqued,
        config_digest: ctx.config_digest.clone(),
    }
}

/// Joins metric and critique rows by id and produces one report per group
/// plus an item-weighted all-items row. With `GroupBy::None` only the
/// all-items row is produced. Group rows are ordered by label; the
/// all-items row comes last with `group_key: None`.
pub fn aggregate(
    ctx: &ReportContext,
    metric_rows: &[MetricRow],
    critique_rows: &[CritiqueRecord],
    group_by: GroupBy,
) -> Result<Vec<EvalReport>, ReportError> {
    if metric_rows.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut metric_ids = BTreeSet::new();
    for row in metric_rows {
        if !metric_ids.insert(row.id.as_str()) {
            return Err(ReportError::DuplicateId(row.id.clone()));
        }
    }
    let mut critique_by_id: BTreeMap<&str, &CritiqueRecord> = BTreeMap::new();
    for record in critique_rows {
        if critique_by_id.insert(record.id.as_str(), record).is_some() {
            return Err(ReportError::DuplicateId(record.id.clone()));
        }
    }
    let critique_ids: BTreeSet<&str> = critique_by_id.keys().copied().collect();
    let only_metrics: Vec<&str> = metric_ids.difference(&critique_ids).copied().collect();
    let only_critique: Vec<&str> = critique_ids.difference(&metric_ids).copied().collect();
    if !only_metrics.is_empty() || !only_critique.is_empty() {
        let mut parts = Vec::new();
        if !only_metrics.is_empty() {
            parts.push(format!("ids without critique rows: {}", only_metrics.join(", ")));
        }
        if !only_critique.is_empty() {
            parts.push(format!("ids without metric rows: {}", only_critique.join(", ")));
        }
        return Err(ReportError::JoinMismatch(parts.join("; ")));
    }

    let mut groups: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
    match group_by {
        GroupBy::None => {}
        GroupBy::Domain => {
            let unlabeled: Vec<&str> = metric_rows
                .iter()
                .filter(|r| r.domain.is_none())
                .map(|r| r.id.as_str())
                .collect();
            if !unlabeled.is_empty() {
                return Err(ReportError::MissingGroupLabel {
                    group: "domain".into(),
                    ids: unlabeled.join(", "),
                });
            }
            for row in metric_rows {
                groups
                    .entry(row.domain.clone().expect("checked above"))
                    .or_default()
                    .push(row);
            }
        }
        GroupBy::Aspect => {
            for row in metric_rows {
                groups.entry(row.aspect.clone()).or_default().push(row);
            }
        }
    }

    let mut reports = Vec::with_capacity(groups.len() + 1);
    for (label, rows) in &groups {
        reports.push(build_report(ctx, Some(label.clone()), rows, &critique_by_id));
    }
    let all: Vec<&MetricRow> = metric_rows.iter().collect();
    reports.push(build_report(ctx, None, &all, &critique_by_id));
    Ok(reports)
}

/// The eleven table columns, in order.
pub const TABLE_COLUMNS: [&str; 11] = [
    "R1", "R2", "RL", "Mt", "Bl", "BeF1", "Re", "Cv", "Im", "Ra", "Gd",
];

const CSV_COLUMNS: [&str; 11] = [
    "r1", "r2", "rl", "mt", "bl", "bef1", "re", "cv", "im", "ra", "gd",
];

/// Rounds to one decimal, half away from zero (values here are never
/// negative, so this is round-half-up).
fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

/// The row's eleven cell values in column order; `None` renders as "-".
fn cell_values(report: &EvalReport) -> [Option<f64>; 11] {
    let m = &report.means;
    let c = report.critique_means;
    [
        Some(m.r1),
        Some(m.r2),
        Some(m.rl),
        Some(m.mt),
        Some(m.bl),
        Some(m.bert_f1),
        c.map(|c| c.re),
        c.map(|c| c.cv),
        c.map(|c| c.im),
        c.map(|c| c.ra),
        report.gd_percent,
    ]
}

fn sorted<'a>(reports: &'a [EvalReport]) -> Vec<&'a EvalReport> {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    // Stable sort: group rows keep their aggregate order (labels ascending,
    // then the Average row) within each model+variation block.
    rows.sort_by(|a, b| {
        (a.model_name.as_str(), a.variation_name.as_str())
            .cmp(&(b.model_name.as_str(), b.variation_name.as_str()))
    });
    rows
}

fn group_cell(report: &EvalReport, grouped: bool) -> String {
    match (&report.group_key, grouped) {
        (Some(key), _) => key.clone(),
        (None, true) => "Average".to_string(),
        (None, false) => String::new(),
    }
}

fn row_label(report: &EvalReport, grouped: bool) -> String {
    let mut label = format!("{}/{}", report.model_name, report.variation_name);
    if grouped {
        label.push('/');
        label.push_str(&group_cell(report, true));
    }
    label
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn distinct_digests(rows: &[&EvalReport]) -> String {
    let digests: BTreeSet<&str> = rows.iter().map(|r| r.config_digest.as_str()).collect();
    digests.into_iter().collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Renders reports as a results table. Rows are ordered by model name
/// then variation (group rows keep aggregation order within each block).
/// Values are shown to one decimal, round-half-up; missing critique means
/// render as "-". Both formats carry the tool version, the config
/// digest(s), the averaging rule, and any critique-coverage gaps.
pub fn render_table(reports: &[EvalReport], format: TableFormat) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::NoReports);
    }
    let rows = sorted(reports);
    let grouped = rows.iter().any(|r| r.group_key.is_some());
    let coverage_notes: Vec<String> = rows
        .iter()
        .filter(|r| r.n_critiqued < r.n_items)
        .map(|r| {
            format!(
                "{}: {} of {} items have critique scores",
                row_label(r, grouped),
                r.n_critiqued,
                r.n_items
            )
        })
        .collect();

    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let mut header = vec!["Model", "Variation"];
            if grouped {
                header.push("Group");
            }
            header.extend(TABLE_COLUMNS);
            out.push_str(&format!("| {} |\n", header.join(" | ")));
            out.push_str(&format!("|{}\n", " --- |".repeat(header.len())));
            for report in &rows {
                let mut cells = vec![report.model_name.clone(), report.variation_name.clone()];
                if grouped {
                    cells.push(group_cell(report, true));
                }
                cells.extend(
                    cell_values(report)
                        .iter()
                        .map(|v| v.map_or("-".to_string(), fmt1)),
                );
                out.push_str(&format!("| {} |\n", cells.join(" | ")));
            }
            out.push('\n');
            out.push_str(
                "Average rows are item-weighted means over all items, not means of group means.\n",
            );
            for note in &coverage_notes {
                out.push_str(&format!(
                    "Critique coverage: {note}; unscored items are excluded from Re/Cv/Im/Ra/Gd.\n"
                ));
            }
            out.push_str(&format!(
                "Config digest: {}. Tool version: {}.\n",
                distinct_digests(&rows),
                crate::VERSION
            ));
        }
        TableFormat::Csv => {
            out.push_str(&format!("# version={}\n", crate::VERSION));
            out.push_str(&format!("# config_digest={}\n", distinct_digests(&rows)));
            out.push_str("# note=average rows are item-weighted means over all items\n");
            for note in &coverage_notes {
                out.push_str(&format!("# critique_coverage={note}\n"));
            }
            out.push_str(&format!("model,variation,group,{}\n", CSV_COLUMNS.join(",")));
            for report in &rows {
                let mut cells = vec![
                    csv_escape(&report.model_name),
                    csv_escape(&report.variation_name),
                    csv_escape(&group_cell(report, grouped)),
                ];
                cells.extend(
                    cell_values(report)
                        .iter()
                        .map(|v| v.map_or("-".to_string(), fmt1)),
                );
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Renders a markdown comparison against one model's rows: every cell
/// shows "value (+delta)" relative to the baseline row with the same
/// variation and group. All columns are higher-is-better, so a positive
/// delta means better than baseline; deltas are computed on the rounded
/// values so they agree with what the table displays.
pub fn compare_models(reports: &[EvalReport], baseline_name: &str) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::NoReports);
    }
    let rows = sorted(reports);
    let grouped = rows.iter().any(|r| r.group_key.is_some());
    let mut baseline_cells: BTreeMap<(&str, Option<&str>), [Option<f64>; 11]> = BTreeMap::new();
    for report in &rows {
        if report.model_name == baseline_name {
            baseline_cells.insert(
                (report.variation_name.as_str(), report.group_key.as_deref()),
                cell_values(report),
            );
        }
    }
    if baseline_cells.is_empty() {
        return Err(ReportError::UnknownBaseline(baseline_name.to_string()));
    }

    let mut out = format!("Baseline: {baseline_name}\n\n");
    let mut header = vec!["Model", "Variation"];
    if grouped {
        header.push("Group");
    }
    header.extend(TABLE_COLUMNS);
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", " --- |".repeat(header.len())));
    for report in &rows {
        let key = (report.variation_name.as_str(), report.group_key.as_deref());
        let baseline = baseline_cells.get(&key).ok_or_else(|| {
            ReportError::BaselineCellMissing {
                baseline: baseline_name.to_string(),
                variation: report.variation_name.clone(),
                group: group_cell(report, grouped),
            }
        })?;
        let mut cells = vec![report.model_name.clone(), report.variation_name.clone()];
        if grouped {
            cells.push(group_cell(report, true));
        }
        for (value, base) in cell_values(report).iter().zip(baseline) {
            cells.push(match (value, base) {
                (Some(v), Some(b)) => {
                    format!("{} ({:+.1})", fmt1(*v), round1(*v) - round1(*b))
                }
                (Some(v), None) => fmt1(*v),
                (None, _) => "-".to_string(),
            });
        }
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out.push_str(&format!(
        "\nPositive deltas are better than the baseline on every column.\n\
         Config digest: {}. Tool version: {}.\n",
        distinct_digests(&rows),
        crate::VERSION
    ));
    Ok(out)
}

/// Long-format csv for plotting: one `(model, variation, group, metric,
/// value)` row per table cell, unrounded to four decimals.
pub fn write_plotdata(reports: &[EvalReport]) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::NoReports);
    }
    let rows = sorted(reports);
    let grouped = rows.iter().any(|r| r.group_key.is_some());
    let mut out = String::from("model,variation,group,metric,value\n");
    for report in &rows {
        for (metric, value) in CSV_COLUMNS.iter().zip(cell_values(report)) {
            let Some(value) = value else { continue };
            out.push_str(&format!(
                "{},{},{},{},{:.4}\n",
                csv_escape(&report.model_name),
                csv_escape(&report.variation_name),
                csv_escape(&group_cell(report, grouped)),
                metric,
                value
            ));
        }
    }
    Ok(out)
}
