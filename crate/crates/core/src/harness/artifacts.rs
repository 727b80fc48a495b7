//! Report artifacts: risk-coverage and histogram CSVs, per-epoch traces and
//! scaled summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{AggregateReport, MethodAggregate, METRIC_NAMES};
use super::recipe::Method;
use super::Result;
use crate::matrix::Matrix;
use crate::metrics::{
    confidence_histogram, risk_coverage, write_histogram_csv, write_risk_coverage_csv, HISTOGRAM_BINS,
};
use crate::scores::{load_scores, softmax_confidence, ScoreSet};

/// Metrics reported in percent.
pub const PERCENT_METRICS: [&str; 9] = [
    "auroc",
    "fpr_at_95tpr",
    "aupr_success",
    "aupr_error",
    "ece",
    "brier",
    "accuracy",
    "confidence_gap",
    "ece_correct_only",
];

fn display_scale(metric: &str) -> f64 {
    match metric {
        "aurc" | "e_aurc" => 1e3,
        "nll" => 10.0,
        m if PERCENT_METRICS.contains(&m) => 100.0,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub seeds: usize,
    pub metrics: BTreeMap<String, ScaledStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShiftRow {
    method: Method,
    kind: String,
    severity: u8,
    metrics: BTreeMap<String, ScaledStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Summary {
    scaling: BTreeMap<String, f64>,
    degraded: bool,
    excluded: usize,
    methods: Vec<SummaryRow>,
    shifted: Vec<ShiftRow>,
}

fn scaled(metrics: &BTreeMap<String, super::experiment::MetricSummary>) -> BTreeMap<String, ScaledStat> {
    metrics
        .iter()
        .map(|(name, s)| {
            let f = display_scale(name);
            (
                name.clone(),
                ScaledStat {
                    mean: s.mean * f,
                    std: s.std * f,
                },
            )
        })
        .collect()
}

fn summary_row(m: &MethodAggregate) -> SummaryRow {
    SummaryRow {
        method: m.method,
        seeds: m.seeds.len(),
        metrics: scaled(&m.metrics),
    }
}

/// Markdown table of scaled means with standard deviations.
pub fn summary_markdown(report: &AggregateReport) -> String {
    let mut md = String::from("# Summary\n\n");
    let _ = writeln!(
        md,
        "AURC and E-AURC are x10^3, NLL is x10, other metrics except temperature are percentages. \
         Mean ± std over seeds.\n"
    );
    let header: Vec<&str> = METRIC_NAMES.to_vec();
    let _ = writeln!(md, "| method | seeds | {} |", header.join(" | "));
    let _ = writeln!(md, "|---|---|{}", "---|".repeat(header.len()));
    for m in &report.methods {
        let row = summary_row(m);
        let cells: Vec<String> = header
            .iter()
            .map(|name| {
                let s = row.metrics[*name];
                format!("{:.2} ± {:.2}", s.mean, s.std)
            })
            .collect();
        let _ = writeln!(md, "| {} | {} | {} |", m.method, row.seeds, cells.join(" | "));
    }
    let temps: Vec<&MethodAggregate> = report
        .methods
        .iter()
        .filter(|m| m.metrics.contains_key("temperature"))
        .collect();
    if !temps.is_empty() {
        let _ = writeln!(md, "\n| method | temperature |\n|---|---|");
        for m in temps {
            let t = &m.metrics["temperature"];
            let _ = writeln!(md, "| {} | {:.4} ± {:.4} |", m.method, t.mean, t.std);
        }
    }
    if report.methods.iter().any(|m| !m.shifted.is_empty()) {
        let cols = ["accuracy", "auroc", "aurc", "ece"];
        let _ = writeln!(md, "\n## Shifted test sets\n");
        let _ = writeln!(md, "| method | shift | severity | {} |", cols.join(" | "));
        let _ = writeln!(md, "|---|---|---|{}", "---|".repeat(cols.len()));
        for m in &report.methods {
            for cell in &m.shifted {
                let metrics = scaled(&cell.metrics);
                let values: Vec<String> = cols
                    .iter()
                    .map(|c| format!("{:.2} ± {:.2}", metrics[*c].mean, metrics[*c].std))
                    .collect();
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} |",
                    m.method,
                    cell.kind,
                    cell.severity,
                    values.join(" | ")
                );
            }
        }
    }
    if report.degraded {
        let _ = writeln!(md, "\n## Excluded runs\n");
        for f in &report.excluded {
            let _ = writeln!(md, "- seed {}, {}: {}", f.seed, f.method, f.reason);
        }
    }
    md
}

/// Concatenated test scores of every completed seed of `method`.
fn pooled_scores(runs_dir: &Path, m: &MethodAggregate) -> Result<ScoreSet> {
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut cols = 0;
    for seed in &m.seeds {
        let s = load_scores(runs_dir.join("scores").join(format!("{}_seed{seed}.csv", m.method)))?;
        cols = s.class_count();
        rows.extend_from_slice(s.logits().as_slice());
        labels.extend_from_slice(s.labels());
    }
    let logits = Matrix::from_vec(labels.len(), cols, rows).expect("consistent score files");
    Ok(ScoreSet::new(logits, labels, None)?)
}

/// Writes the report artifacts for a persisted run directory into `out_dir`
/// and returns the written paths in creation order.
///
/// Curves and histograms pool the test predictions of all completed seeds.
pub fn emit_artifacts(report: &AggregateReport, runs_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for sub in ["risk_coverage", "histograms", "traces"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    for m in &report.methods {
        let scores = pooled_scores(runs_dir, m)?;
        let preds = softmax_confidence(&scores)?;

        let path = out_dir.join("risk_coverage").join(format!("{}.csv", m.method));
        write_risk_coverage_csv(&risk_coverage(&preds)?, &mut BufWriter::new(fs::File::create(&path)?))?;
        written.push(path);

        let path = out_dir.join("histograms").join(format!("{}.csv", m.method));
        let hist = confidence_histogram(&preds, HISTOGRAM_BINS);
        write_histogram_csv(&hist, &mut BufWriter::new(fs::File::create(&path)?))?;
        written.push(path);

        for seed in &m.seeds {
            let name = format!("{}_seed{seed}.csv", m.method);
            let path = out_dir.join("traces").join(&name);
            fs::copy(runs_dir.join("traces").join(&name), &path)?;
            written.push(path);
        }
    }

    let summary = Summary {
        scaling: METRIC_NAMES.iter().map(|m| (m.to_string(), display_scale(m))).collect(),
        degraded: report.degraded,
        excluded: report.excluded.len(),
        methods: report.methods.iter().map(summary_row).collect(),
        shifted: report
            .methods
            .iter()
            .flat_map(|m| {
                m.shifted.iter().map(|c| ShiftRow {
                    method: m.method,
                    kind: c.kind.to_string(),
                    severity: c.severity,
                    metrics: scaled(&c.metrics),
                })
            })
            .collect(),
    };
    let path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);

    let path = out_dir.join("summary.md");
    fs::write(&path, summary_markdown(report))?;
    written.push(path);
    Ok(written)
}
