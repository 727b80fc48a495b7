//! Methods x seeds experiments, per-seed persistence and aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{apply_shift, generate, ShiftKind, ShiftSpec, SyntheticDataset};
use super::recipe::{Method, TrainRecipe};
use super::{HarnessError, Result};
use crate::matrix::{log_softmax_row, Matrix};
use crate::metrics::{evaluate, EvalReport};
use crate::nnkit::{forward, LossKind, NetworkSpec, ParamVector};
use crate::optim::{fmfp_train, write_trace_csv, EpochRecord, LabeledSet, OptimError, TrainMethod, TrainOutcome};
use crate::posthoc::{fit_temperature, scale, FitSplit};
use crate::scores::{split, write_csv, ScoreSet};

/// Mixed into the experiment seed so the split shuffle does not replay the
/// generator's label shuffle.
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub const METRIC_NAMES: [&str; 12] = [
    "aurc",
    "e_aurc",
    "auroc",
    "fpr_at_95tpr",
    "aupr_success",
    "aupr_error",
    "ece",
    "nll",
    "brier",
    "accuracy",
    "confidence_gap",
    "ece_correct_only",
];

const LOWER_IS_BETTER: [&str; 7] = [
    "aurc",
    "e_aurc",
    "fpr_at_95tpr",
    "ece",
    "nll",
    "brier",
    "ece_correct_only",
];

pub fn metric_entries(r: &EvalReport) -> [(&'static str, f64); 12] {
    let values = [
        r.aurc,
        r.e_aurc,
        r.auroc,
        r.fpr_at_95tpr,
        r.aupr_success,
        r.aupr_error,
        r.ece,
        r.nll,
        r.brier,
        r.accuracy,
        r.confidence_gap,
        r.ece_correct_only,
    ];
    let mut out = [("", 0.0); 12];
    for (slot, (name, v)) in out.iter_mut().zip(METRIC_NAMES.iter().zip(values)) {
        *slot = (name, v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedReport {
    pub kind: ShiftKind,
    pub severity: u8,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub report: EvalReport,
    pub temperature: Option<f64>,
    pub swa_count: usize,
    pub shifted: Vec<ShiftedReport>,
}

/// A method that produced no usable result for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub runs: Vec<MethodRun>,
    pub failures: Vec<RunFailure>,
}

impl SeedResult {
    pub fn run(&self, method: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// One seed's results plus the bulky per-method outputs that are persisted
/// as CSV rather than JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutput {
    pub result: SeedResult,
    pub traces: Vec<(Method, Vec<EpochRecord>)>,
    /// Test-set scores after any temperature scaling.
    pub scores: Vec<(Method, ScoreSet)>,
}

struct Splits {
    train: SyntheticDataset,
    val: SyntheticDataset,
    test: SyntheticDataset,
    shifted: Vec<(ShiftSpec, SyntheticDataset)>,
}

fn prepare(recipe: &TrainRecipe, seed: u64) -> Result<Splits> {
    let data = generate(&recipe.generator_config(seed))?;
    let indices = split(data.len(), &recipe.split(seed ^ SPLIT_SALT))?;
    let (train, val, test) = data.partition(&indices);
    let mut shifted = Vec::new();
    for &kind in &recipe.shift_kinds {
        for severity in 1..=ShiftSpec::MAX_SEVERITY {
            let spec = ShiftSpec::new(kind, severity)?;
            shifted.push((spec, apply_shift(&test, &spec, seed)?));
        }
    }
    Ok(Splits {
        train,
        val,
        test,
        shifted,
    })
}

fn labeled(d: &SyntheticDataset) -> LabeledSet<'_> {
    LabeledSet {
        inputs: &d.inputs,
        labels: &d.labels,
    }
}

fn score(spec: &NetworkSpec, params: &ParamVector, d: &SyntheticDataset) -> Result<ScoreSet> {
    Ok(ScoreSet::new(
        forward(spec, params, &d.inputs)?,
        d.labels.clone(),
        None,
    )?)
}

/// Scores and reports for one trained network. Errors here are reasons to
/// exclude the run, not to abort the experiment.
fn evaluate_method(
    recipe: &TrainRecipe,
    method: Method,
    outcome: &TrainOutcome,
    splits: &Splits,
) -> Result<(MethodRun, ScoreSet)> {
    let spec = recipe.network();
    let params = outcome.eval_params();
    let mut test = score(&spec, params, &splits.test)?;
    let temperature = match method.temperature_fit() {
        Some((fitted_on, objective)) => {
            let fit_set = match fitted_on {
                FitSplit::Validation => score(&spec, params, &splits.val)?,
                _ => test.clone(),
            };
            let model = fit_temperature(&fit_set, objective, fitted_on)?;
            test = model.apply(&test)?;
            Some(model.t)
        }
        None => None,
    };
    let report = evaluate(&test, recipe.ece_bins)?;
    let mut shifted = Vec::with_capacity(splits.shifted.len());
    for (shift, data) in &splits.shifted {
        let mut s = score(&spec, params, data)?;
        if let Some(t) = temperature {
            s = scale(&s, t)?;
        }
        shifted.push(ShiftedReport {
            kind: shift.kind,
            severity: shift.severity,
            report: evaluate(&s, recipe.ece_bins)?,
        });
    }
    let run = MethodRun {
        method,
        report,
        temperature,
        swa_count: outcome.swa_count,
        shifted,
    };
    Ok((run, test))
}

/// Trains and evaluates every recipe method for one seed. Methods sharing an
/// optimizer and loss share one training run. Diverged or degenerate runs are
/// recorded as failures.
pub fn run_seed(recipe: &TrainRecipe, seed: u64) -> Result<SeedOutput> {
    recipe.validate()?;
    let splits = prepare(recipe, seed)?;
    let spec = recipe.network();
    let mut trained: Vec<((TrainMethod, LossKind), std::result::Result<TrainOutcome, String>)> = Vec::new();
    let mut out = SeedOutput {
        result: SeedResult {
            seed,
            runs: Vec::new(),
            failures: Vec::new(),
        },
        traces: Vec::new(),
        scores: Vec::new(),
    };

    for &method in &recipe.methods {
        let key = method.training();
        if !trained.iter().any(|(k, _)| *k == key) {
            let test = recipe.trace_test.then(|| labeled(&splits.test));
            let outcome = match fmfp_train(&spec, labeled(&splits.train), test, &recipe.train_config(method, seed)) {
                Ok(o) => Ok(o),
                Err(OptimError::Diverged { epoch }) => Err(format!("training diverged in epoch {epoch}")),
                Err(e) => return Err(e.into()),
            };
            trained.push((key, outcome));
        }
        let outcome = &trained.iter().find(|(k, _)| *k == key).expect("just trained").1;
        let evaluated = outcome
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|o| evaluate_method(recipe, method, o, &splits).map_err(|e| e.to_string()));
        match evaluated {
            Ok((run, scores)) => {
                let trace = outcome.as_ref().expect("evaluated").trace.clone();
                out.result.runs.push(run);
                out.traces.push((method, trace));
                out.scores.push((method, scores));
            }
            Err(reason) => {
                log::warn!("seed {seed}, method {method}: {reason}; excluded from aggregation");
                out.result.failures.push(RunFailure { seed, method, reason });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub median: f64,
    /// One value per seed, in the order of the owning `seeds` list.
    pub values: Vec<f64>,
}

impl MetricSummary {
    fn of(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Self {
            mean,
            std,
            median,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityAggregate {
    pub kind: ShiftKind,
    pub severity: u8,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    /// Seeds that completed; failed seeds are listed in the report's
    /// `excluded`.
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub shifted: Vec<SeverityAggregate>,
}

impl MethodAggregate {
    pub fn metric(&self, name: &str) -> Result<&MetricSummary> {
        self.metrics
            .get(name)
            .ok_or_else(|| HarnessError::UnknownMetric(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodAggregate>,
    pub excluded: Vec<RunFailure>,
    /// True when any run was excluded.
    pub degraded: bool,
}

impl AggregateReport {
    pub fn method(&self, method: Method) -> Result<&MethodAggregate> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .ok_or_else(|| HarnessError::MissingMethod(method.to_string()))
    }
}

fn summarize(reports: &[&EvalReport], temperatures: &[Option<f64>]) -> BTreeMap<String, MetricSummary> {
    let mut metrics: BTreeMap<String, MetricSummary> = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values = reports.iter().map(|r| metric_entries(r)[i].1).collect();
            (name.to_string(), MetricSummary::of(values))
        })
        .collect();
    let temps: Option<Vec<f64>> = temperatures.iter().copied().collect();
    if let Some(t) = temps.filter(|t| !t.is_empty()) {
        metrics.insert("temperature".into(), MetricSummary::of(t));
    }
    metrics
}

/// Mean, standard deviation and median over seeds for every method and
/// metric. Depends only on the per-seed results, so recomputing it from
/// persisted seed files reproduces the original report.
pub fn aggregate(results: &[SeedResult]) -> AggregateReport {
    let mut sorted: Vec<&SeedResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.seed);

    let mut by_method: BTreeMap<Method, Vec<(u64, &MethodRun)>> = BTreeMap::new();
    for r in &sorted {
        for run in &r.runs {
            by_method.entry(run.method).or_default().push((r.seed, run));
        }
    }

    let methods = by_method
        .into_iter()
        .map(|(method, runs)| {
            let reports: Vec<&EvalReport> = runs.iter().map(|(_, r)| &r.report).collect();
            let temps: Vec<Option<f64>> = runs.iter().map(|(_, r)| r.temperature).collect();
            let mut cells: Vec<((ShiftKind, u8), Vec<&EvalReport>)> = Vec::new();
            for (_, run) in &runs {
                for s in &run.shifted {
                    let key = (s.kind, s.severity);
                    match cells.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, v)) => v.push(&s.report),
                        None => cells.push((key, vec![&s.report])),
                    }
                }
            }
            cells.sort_by_key(|(k, _)| *k);
            MethodAggregate {
                method,
                seeds: runs.iter().map(|(s, _)| *s).collect(),
                metrics: summarize(&reports, &temps),
                shifted: cells
                    .into_iter()
                    .map(|((kind, severity), reports)| SeverityAggregate {
                        kind,
                        severity,
                        metrics: summarize(&reports, &[]),
                    })
                    .collect(),
            }
        })
        .collect();

    let excluded: Vec<RunFailure> = sorted.iter().flat_map(|r| r.failures.iter().cloned()).collect();
    AggregateReport {
        seeds: sorted.iter().map(|r| r.seed).collect(),
        methods,
        degraded: !excluded.is_empty(),
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: Method,
    pub method_b: Method,
    pub metric: String,
    /// Mean over shared seeds of `a - b`.
    pub mean_difference: f64,
    pub median_difference: f64,
    /// Seeds where `a` is strictly better, taking the metric's direction
    /// into account.
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

/// Paired comparison of two methods on the seeds both completed.
pub fn compare_methods(report: &AggregateReport, a: Method, b: Method, metric: &str) -> Result<Comparison> {
    let (ma, mb) = (report.method(a)?, report.method(b)?);
    let (va, vb) = (ma.metric(metric)?, mb.metric(metric)?);
    let diffs: Vec<f64> = ma
        .seeds
        .iter()
        .zip(&va.values)
        .filter_map(|(seed, x)| {
            let j = mb.seeds.iter().position(|s| s == seed)?;
            Some(x - vb.values[j])
        })
        .collect();
    if diffs.is_empty() {
        return Err(HarnessError::InvalidConfig(format!(
            "{a} and {b} share no completed seeds"
        )));
    }
    let sign = if LOWER_IS_BETTER.contains(&metric) { -1.0 } else { 1.0 };
    let count = |pred: fn(f64) -> bool| diffs.iter().filter(|&&d| pred(sign * d)).count();
    let summary = MetricSummary::of(diffs.clone());
    Ok(Comparison {
        method_a: a,
        method_b: b,
        metric: metric.to_string(),
        mean_difference: summary.mean,
        median_difference: summary.median,
        wins_a: count(|d| d > 0.0),
        wins_b: count(|d| d < 0.0),
        ties: count(|d| d == 0.0),
    })
}

// ---------------------------------------------------------------------------
// Experiment driver and persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub report: AggregateReport,
    pub seeds: Vec<SeedOutput>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn persist_seed(dir: &Path, out: &SeedOutput) -> Result<()> {
    let seed = out.result.seed;
    write_json(&dir.join(format!("seed_{seed}.json")), &out.result)?;
    for (method, trace) in &out.traces {
        let file = fs::File::create(dir.join("traces").join(format!("{method}_seed{seed}.csv")))?;
        write_trace_csv(trace, &mut BufWriter::new(file))?;
    }
    for (method, scores) in &out.scores {
        let file = fs::File::create(dir.join("scores").join(format!("{method}_seed{seed}.csv")))?;
        write_csv(scores, &mut BufWriter::new(file))?;
    }
    Ok(())
}

/// Runs every seed of `recipe` (in parallel when threads are available) and
/// aggregates. With `out_dir`, also writes `recipe.toml`, `seed_<s>.json`,
/// `aggregate.json`, `traces/<method>_seed<s>.csv` and
/// `scores/<method>_seed<s>.csv`.
pub fn run_experiment(recipe: &TrainRecipe, out_dir: Option<&Path>) -> Result<Experiment> {
    recipe.validate()?;
    let seeds: Vec<SeedOutput> = recipe
        .seeds
        .par_iter()
        .map(|&seed| run_seed(recipe, seed))
        .collect::<Result<_>>()?;
    let results: Vec<SeedResult> = seeds.iter().map(|s| s.result.clone()).collect();
    let report = aggregate(&results);
    if report.degraded {
        log::warn!("{} run(s) excluded; report is degraded", report.excluded.len());
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("traces"))?;
        fs::create_dir_all(dir.join("scores"))?;
        fs::write(dir.join("recipe.toml"), recipe.to_toml_string())?;
        for s in &seeds {
            persist_seed(dir, s)?;
        }
        write_json(&dir.join("aggregate.json"), &report)?;
    }
    Ok(Experiment { report, seeds })
}

/// Reads every `seed_<s>.json` in `dir`, ordered by seed.
pub fn load_seed_results(dir: &Path) -> Result<Vec<SeedResult>> {
    let mut results = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("seed_") && name.ends_with(".json") {
            let text = fs::read_to_string(&path)?;
            results.push(serde_json::from_str::<SeedResult>(&text)?);
        }
    }
    if results.is_empty() {
        return Err(HarnessError::Runs(format!(
            "no seed_<s>.json files in {}",
            dir.display()
        )));
    }
    results.sort_by_key(|r| r.seed);
    Ok(results)
}

// ---------------------------------------------------------------------------
// Flatness probe
// ---------------------------------------------------------------------------

fn mean_cross_entropy(spec: &NetworkSpec, params: &ParamVector, data: LabeledSet<'_>) -> Result<f64> {
    let logits: Matrix = forward(spec, params, data.inputs)?;
    let total: f64 = logits
        .iter_rows()
        .zip(data.labels)
        .map(|(z, &y)| -log_softmax_row(z)[y])
        .sum();
    Ok(total / data.labels.len().max(1) as f64)
}

/// Mean increase of the cross-entropy on `data` when the weights move by a
/// random direction of length `rho`, over `directions` draws. Lower means a
/// flatter minimum.
pub fn sharpness_probe(
    spec: &NetworkSpec,
    params: &ParamVector,
    data: LabeledSet<'_>,
    rho: f64,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    if directions == 0 || !(rho >= 0.0) {
        return Err(HarnessError::InvalidConfig(
            "probe needs rho >= 0 and at least one direction".into(),
        ));
    }
    let base = mean_cross_entropy(spec, params, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..directions {
        let dir: Vec<f64> = (0..params.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let mut moved = params.clone();
        for (v, d) in moved.values_mut().iter_mut().zip(&dir) {
            *v += rho * d / norm;
        }
        total += mean_cross_entropy(spec, &moved, data)? - base;
    }
    Ok(total / directions as f64)
}
