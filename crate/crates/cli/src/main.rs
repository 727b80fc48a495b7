//! `failsafe`: evaluate score files, fit temperatures, run synthetic
//! experiments and emit report artifacts.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 an experiment completed with excluded runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use failsafe_core::harness::{
    aggregate, emit_artifacts, load_seed_results, run_experiment, summary_markdown, AggregateReport, HarnessError,
    TrainRecipe,
};
use failsafe_core::metrics::{evaluate, nll, DEFAULT_ECE_BINS};
use failsafe_core::posthoc::{fit_temperature, FitSplit, TsObjective};
use failsafe_core::scores::{load_scores, save_scores};

#[derive(Debug, Parser)]
#[command(name = "failsafe", version, about = "Failure prediction and calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute every metric for a score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Number of equal-width ECE bins.
        #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
        bins: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a temperature on a score file.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        /// Which split the score file holds; fitting on test is an oracle.
        #[arg(long, value_enum)]
        fit_on: SplitArg,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Nll)]
        objective: ObjectiveArg,
        /// Write the temperature-scaled scores to this file.
        #[arg(long)]
        apply: Option<PathBuf>,
        /// Write the fitted model as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a synthetic experiment and persist per-seed results.
    Train {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a run directory and write curves, histograms and tables.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        emit: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Nll,
    Auroc,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DEGRADED: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn data(err: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: err.to_string(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(err: HarnessError) -> Self {
        let code = match err {
            HarnessError::InvalidConfig(_)
            | HarnessError::Recipe(_)
            | HarnessError::UnknownMethod(_)
            | HarnessError::UnknownShift(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::data)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval(scores: &Path, bins: usize, out: Option<&Path>) -> Outcome {
    if bins == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--bins must be at least 1".into(),
        });
    }
    let set = load_scores(scores).map_err(Failure::data)?;
    let report = evaluate(&set, bins).map_err(Failure::data)?;
    write_json(&serde_json::to_value(report).map_err(Failure::data)?, out)?;
    Ok(0)
}

fn calibrate(
    scores: &Path,
    fit_on: SplitArg,
    objective: ObjectiveArg,
    apply: Option<&Path>,
    out: Option<&Path>,
) -> Outcome {
    let set = load_scores(scores).map_err(Failure::data)?;
    let split = match fit_on {
        SplitArg::Val => FitSplit::Validation,
        SplitArg::Test => FitSplit::Test,
    };
    let objective = match objective {
        ObjectiveArg::Nll => TsObjective::Nll,
        ObjectiveArg::Auroc => TsObjective::Auroc,
    };
    let model = fit_temperature(&set, objective, split).map_err(Failure::data)?;
    let scaled = model.apply(&set).map_err(Failure::data)?;
    if let Some(path) = apply {
        save_scores(&scaled, path).map_err(Failure::data)?;
        log::info!("wrote scaled scores to {}", path.display());
    }
    let mut value = serde_json::to_value(model).map_err(Failure::data)?;
    value["nll_before"] = nll(&set).mean.into();
    value["nll_after"] = nll(&scaled).mean.into();
    write_json(&value, out)?;
    Ok(0)
}

fn finish(report: &AggregateReport) -> u8 {
    if report.degraded {
        for f in &report.excluded {
            log::warn!("excluded seed {} {}: {}", f.seed, f.method, f.reason);
        }
        EXIT_DEGRADED
    } else {
        0
    }
}

fn train(recipe: &Path, out: &Path) -> Outcome {
    let text = fs::read_to_string(recipe).map_err(|e| Failure::data(format!("{}: {e}", recipe.display())))?;
    // Anything wrong with a readable recipe is a configuration error.
    let recipe = TrainRecipe::from_toml_str(&text).map_err(|e| Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    })?;
    let experiment = run_experiment(&recipe, Some(out))?;
    print!("{}", summary_markdown(&experiment.report));
    Ok(finish(&experiment.report))
}

fn report(runs: &Path, emit: &Path) -> Outcome {
    let results = load_seed_results(runs)?;
    if results.is_empty() {
        return Err(Failure::data(format!("no seed results in {}", runs.display())));
    }
    let report = aggregate(&results);
    let written = emit_artifacts(&report, runs, emit)?;
    for path in &written {
        println!("{}", path.display());
    }
    Ok(finish(&report))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Eval { scores, bins, out } => eval(scores, *bins, out.as_deref()),
        Command::Calibrate {
            scores,
            fit_on,
            objective,
            apply,
            out,
        } => calibrate(scores, *fit_on, *objective, apply.as_deref(), out.as_deref()),
        Command::Train { recipe, out } => train(recipe, out),
        Command::Report { runs, emit } => report(runs, emit),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
