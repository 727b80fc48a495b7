//! Failure-prediction and calibration metrics.
//!
//! Failure prediction treats a correct prediction as the positive class and
//! ranks samples by confidence. Every value returned here is raw: report
//! scaling (AURC x 1000, NLL x 10, percentages) belongs to the reporting
//! layer in [`crate::harness`].

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scores::{softmax_confidence, Prediction, ScoreSet, ScoresError};

pub const DEFAULT_ECE_BINS: usize = 15;
pub const HISTOGRAM_BINS: usize = 20;

/// Probabilities are floored here before the log in NLL.
const NLL_PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no predictions")]
    Empty,
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: &'static str },
    #[error("bin count must be at least 1")]
    InvalidBins,
    #[error(transparent)]
    Scores(#[from] ScoresError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn undefined(metric: &'static str, reason: &'static str) -> MetricError {
    MetricError::Undefined { metric, reason }
}

/// Predictions ordered by confidence, highest first; equal confidences keep
/// the lowest sample index first.
fn ranked(predictions: &[Prediction]) -> Vec<Prediction> {
    let mut sorted = predictions.to_vec();
    sorted.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.sample.cmp(&b.sample))
    });
    sorted
}

/// Cumulative (positives, negatives) after each block of tied scores, sweeping
/// the threshold from the highest score down.
fn tied_sweep(scored: &mut [(f64, bool)]) -> Vec<(usize, usize)> {
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut out = Vec::new();
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let score = scored[i].0;
        while i < scored.len() && scored[i].0 == score {
            if scored[i].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        out.push((pos, neg));
    }
    out
}

fn class_counts(predictions: &[Prediction]) -> (usize, usize) {
    let correct = predictions.iter().filter(|p| p.is_correct).count();
    (correct, predictions.len() - correct)
}

fn require_both(predictions: &[Prediction], metric: &'static str) -> Result<(usize, usize)> {
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    match class_counts(predictions) {
        (0, _) => Err(undefined(metric, "no correct predictions")),
        (_, 0) => Err(undefined(metric, "no misclassified predictions")),
        counts => Ok(counts),
    }
}

// ---------------------------------------------------------------------------
// Risk-coverage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    pub points: Vec<RiskCoveragePoint>,
    pub aurc: f64,
    pub e_aurc: f64,
}

/// Mean selective risk over the coverage grid k/n for an error sequence
/// listed in acceptance order.
fn aurc_of(errors_in_order: impl Iterator<Item = bool>, n: usize) -> (Vec<RiskCoveragePoint>, f64) {
    let mut points = Vec::with_capacity(n);
    let mut errors = 0usize;
    let mut total = 0.0;
    for (idx, is_error) in errors_in_order.enumerate() {
        let k = idx + 1;
        errors += usize::from(is_error);
        let risk = errors as f64 / k as f64;
        total += risk;
        points.push(RiskCoveragePoint {
            coverage: k as f64 / n as f64,
            risk,
        });
    }
    (points, total / n as f64)
}

/// Risk-coverage curve with one point per accepted-sample count.
///
/// `e_aurc` subtracts the AURC of the ordering that places every correct
/// prediction ahead of every error.
pub fn risk_coverage(predictions: &[Prediction]) -> Result<RiskCoverageCurve> {
    let n = predictions.len();
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let order = ranked(predictions);
    let (points, aurc) = aurc_of(order.iter().map(|p| !p.is_correct), n);
    let (correct, _) = class_counts(predictions);
    let (_, optimal) = aurc_of((0..n).map(|k| k >= correct), n);
    Ok(RiskCoverageCurve {
        points,
        aurc,
        e_aurc: aurc - optimal,
    })
}

/// Area under the ROC curve with correct predictions as positives.
///
/// Tied confidences contribute a diagonal ROC segment, i.e. half credit.
pub fn auroc(predictions: &[Prediction]) -> Result<f64> {
    let (pos, neg) = require_both(predictions, "AUROC")?;
    let mut scored: Vec<(f64, bool)> = predictions.iter().map(|p| (p.confidence, p.is_correct)).collect();
    let mut area = 0.0;
    let (mut tp_prev, mut fp_prev) = (0usize, 0usize);
    for (tp, fp) in tied_sweep(&mut scored) {
        area += (fp - fp_prev) as f64 * (tp + tp_prev) as f64 / 2.0;
        tp_prev = tp;
        fp_prev = fp;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// False-positive rate at the largest confidence threshold whose
/// true-positive rate reaches 95%.
pub fn fpr_at_95tpr(predictions: &[Prediction]) -> Result<f64> {
    let (pos, neg) = require_both(predictions, "FPR@95%TPR")?;
    let mut scored: Vec<(f64, bool)> = predictions.iter().map(|p| (p.confidence, p.is_correct)).collect();
    let (_, fp) = tied_sweep(&mut scored)
        .into_iter()
        .find(|&(tp, _)| tp * 100 >= pos * 95)
        .expect("the lowest threshold accepts every positive");
    Ok(fp as f64 / neg as f64)
}

/// Which outcome counts as the positive class for AUPR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positive {
    /// AUPR-Success: correct predictions ranked by confidence.
    Correct,
    /// AUPR-Error: errors ranked by negated confidence.
    Error,
}

/// Area under the precision-recall curve, as the step sum
/// `sum (R_k - R_{k-1}) * P_k` over distinct thresholds.
pub fn aupr(predictions: &[Prediction], positive: Positive) -> Result<f64> {
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut scored: Vec<(f64, bool)> = predictions
        .iter()
        .map(|p| match positive {
            Positive::Correct => (p.confidence, p.is_correct),
            Positive::Error => (-p.confidence, !p.is_correct),
        })
        .collect();
    let total_pos = scored.iter().filter(|s| s.1).count();
    if total_pos == 0 {
        return Err(undefined("AUPR", "no positive samples"));
    }
    let mut area = 0.0;
    let mut recall_prev = 0.0;
    for (tp, fp) in tied_sweep(&mut scored) {
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - recall_prev) * precision;
        recall_prev = recall;
    }
    Ok(area)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Index of the equal-width bin holding `confidence`; bins are
/// `[k/m, (k+1)/m)` except the last, which is closed at 1.
pub fn bin_index(confidence: f64, m: usize) -> usize {
    let lower = |k: usize| k as f64 / m as f64;
    let mut k = ((confidence * m as f64).floor().max(0.0) as usize).min(m - 1);
    if k > 0 && confidence < lower(k) {
        k -= 1;
    } else if k + 1 < m && confidence >= lower(k + 1) {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Zero for an empty bin.
    pub accuracy: f64,
    /// Zero for an empty bin.
    pub avg_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Expected calibration error over `m` equal-width confidence bins.
pub fn ece(predictions: &[Prediction], m: usize) -> Result<CalibrationBins> {
    if m == 0 {
        return Err(MetricError::InvalidBins);
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut counts = vec![0usize; m];
    let mut correct = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    for p in predictions {
        let k = bin_index(p.confidence, m);
        counts[k] += 1;
        correct[k] += usize::from(p.is_correct);
        conf_sum[k] += p.confidence;
    }
    let n = predictions.len() as f64;
    let mut ece = 0.0;
    let bins = (0..m)
        .map(|k| {
            let (accuracy, avg_confidence) = if counts[k] == 0 {
                (0.0, 0.0)
            } else {
                let c = counts[k] as f64;
                (correct[k] as f64 / c, conf_sum[k] / c)
            };
            ece += counts[k] as f64 / n * (accuracy - avg_confidence).abs();
            CalibrationBin {
                lower: k as f64 / m as f64,
                upper: (k + 1) as f64 / m as f64,
                count: counts[k],
                accuracy,
                avg_confidence,
            }
        })
        .collect();
    Ok(CalibrationBins { bins, ece })
}

/// ECE restricted to correctly classified samples.
pub fn ece_correct_only(predictions: &[Prediction], m: usize) -> Result<f64> {
    let correct: Vec<Prediction> = predictions.iter().filter(|p| p.is_correct).copied().collect();
    if correct.is_empty() {
        return Err(undefined("correct-only ECE", "no correct predictions"));
    }
    Ok(ece(&correct, m)?.ece)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nll {
    pub sum: f64,
    pub mean: f64,
}

/// Negative log-likelihood of the true class.
pub fn nll(scores: &ScoreSet) -> Nll {
    let probs = scores.probabilities();
    let sum: f64 = probs
        .iter_rows()
        .zip(scores.labels())
        .map(|(p, &y)| -p[y].max(NLL_PROB_FLOOR).ln())
        .sum();
    Nll {
        sum,
        mean: sum / scores.len() as f64,
    }
}

/// Mean over samples of the squared distance between the probability row
/// and the one-hot label.
pub fn brier(scores: &ScoreSet) -> f64 {
    let probs = scores.probabilities();
    let total: f64 = probs
        .iter_rows()
        .zip(scores.labels())
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(k, &pk)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (pk - t) * (pk - t)
                })
                .sum::<f64>()
        })
        .sum();
    total / scores.len() as f64
}

/// Mean confidence of correct predictions minus that of errors.
pub fn confidence_gap(predictions: &[Prediction]) -> Result<f64> {
    let (pos, neg) = require_both(predictions, "confidence gap")?;
    let (mut sum_pos, mut sum_neg) = (0.0, 0.0);
    for p in predictions {
        if p.is_correct {
            sum_pos += p.confidence;
        } else {
            sum_neg += p.confidence;
        }
    }
    Ok(sum_pos / pos as f64 - sum_neg / neg as f64)
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aurc: f64,
    pub e_aurc: f64,
    pub auroc: f64,
    pub fpr_at_95tpr: f64,
    pub aupr_success: f64,
    pub aupr_error: f64,
    pub ece: f64,
    /// Mean per-sample NLL.
    pub nll: f64,
    pub brier: f64,
    pub accuracy: f64,
    pub confidence_gap: f64,
    pub ece_correct_only: f64,
}

/// Every metric for a score set. Fails when the set has no errors or no
/// correct predictions, since the failure-prediction metrics are then
/// undefined.
pub fn evaluate(scores: &ScoreSet, bins: usize) -> Result<EvalReport> {
    let preds = softmax_confidence(scores)?;
    evaluate_predictions(scores, &preds, bins)
}

pub fn evaluate_predictions(scores: &ScoreSet, preds: &[Prediction], bins: usize) -> Result<EvalReport> {
    let curve = risk_coverage(preds)?;
    let (correct, _) = class_counts(preds);
    Ok(EvalReport {
        aurc: curve.aurc,
        e_aurc: curve.e_aurc,
        auroc: auroc(preds)?,
        fpr_at_95tpr: fpr_at_95tpr(preds)?,
        aupr_success: aupr(preds, Positive::Correct)?,
        aupr_error: aupr(preds, Positive::Error)?,
        ece: ece(preds, bins)?.ece,
        nll: nll(scores).mean,
        brier: brier(scores),
        accuracy: correct as f64 / preds.len() as f64,
        confidence_gap: confidence_gap(preds)?,
        ece_correct_only: ece_correct_only(preds, bins)?,
    })
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

/// `coverage,risk` rows followed by `# AURC=` and `# E-AURC=` comment lines.
pub fn write_risk_coverage_csv<W: Write>(curve: &RiskCoverageCurve, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "coverage,risk")?;
    for p in &curve.points {
        writeln!(out, "{},{}", p.coverage, p.risk)?;
    }
    writeln!(out, "# AURC={}", curve.aurc)?;
    writeln!(out, "# E-AURC={}", curve.e_aurc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count_correct: usize,
    pub count_incorrect: usize,
}

/// Confidence histogram split by correctness, over equal-width bins.
pub fn confidence_histogram(predictions: &[Prediction], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lower: k as f64 / bins as f64,
            upper: (k + 1) as f64 / bins as f64,
            count_correct: 0,
            count_incorrect: 0,
        })
        .collect();
    for p in predictions {
        let bin = &mut out[bin_index(p.confidence, bins)];
        if p.is_correct {
            bin.count_correct += 1;
        } else {
            bin.count_incorrect += 1;
        }
    }
    out
}

pub fn write_histogram_csv<W: Write>(hist: &[HistogramBin], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "bin_low,bin_high,count_correct,count_incorrect")?;
    for b in hist {
        writeln!(
            out,
            "{:.2},{:.2},{},{}",
            b.lower, b.upper, b.count_correct, b.count_incorrect
        )?;
    }
    Ok(())
}
