//! Temperature scaling: divide every logit by a single fitted scalar.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricError};
use crate::scores::{softmax_confidence, ScoreSet, ScoresError};

pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 100.0;
/// Golden-section search stops once the log-temperature bracket is this narrow.
pub const LOG_T_TOLERANCE: f64 = 1e-6;
pub const AUROC_GRID_POINTS: usize = 1000;

#[derive(Debug, Error)]
pub enum PosthocError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error(transparent)]
    Scores(#[from] ScoresError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T, E = PosthocError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSplit {
    Validation,
    Test,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsObjective {
    Nll,
    Auroc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub t: f64,
    pub fitted_on: FitSplit,
    pub objective: TsObjective,
    /// The fit landed on an edge of the search interval.
    pub at_boundary: bool,
}

impl TemperatureModel {
    pub fn fixed(t: f64) -> Result<Self> {
        check_temperature(t)?;
        Ok(Self {
            t,
            fitted_on: FitSplit::Fixed,
            objective: TsObjective::Nll,
            at_boundary: false,
        })
    }

    pub fn apply(&self, scores: &ScoreSet) -> Result<ScoreSet> {
        scale(scores, self.t)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PosthocError::InvalidTemperature(t))
    }
}

/// Logits divided by `t`. The predicted class of every sample is unchanged.
pub fn scale(scores: &ScoreSet, t: f64) -> Result<ScoreSet> {
    check_temperature(t)?;
    Ok(scores.map_logits(|z| z / t)?)
}

/// Mean NLL after scaling by `exp(log_t)`.
fn nll_at_log_t(scores: &ScoreSet, log_t: f64) -> Result<f64> {
    Ok(metrics::nll(&scale(scores, log_t.exp())?).mean)
}

/// Fits a temperature on `scores`.
///
/// * [`TsObjective::Nll`]: golden-section search for the NLL minimum over
///   `log t` in `[ln 0.01, ln 100]`. The result is never worse than `t = 1`.
/// * [`TsObjective::Auroc`]: the AUROC maximizer over 1000 log-spaced
///   temperatures plus `t = 1`, keeping the earliest on ties.
pub fn fit_temperature(scores: &ScoreSet, objective: TsObjective, fitted_on: FitSplit) -> Result<TemperatureModel> {
    let t = match objective {
        TsObjective::Nll => fit_nll(scores)?,
        TsObjective::Auroc => fit_auroc(scores)?,
    };
    let at_boundary = (t.ln() - MIN_TEMPERATURE.ln()).abs() < 1e-3 || (t.ln() - MAX_TEMPERATURE.ln()).abs() < 1e-3;
    if at_boundary {
        log::warn!("fitted temperature {t} is at the edge of the search interval");
    }
    Ok(TemperatureModel {
        t,
        fitted_on,
        objective,
        at_boundary,
    })
}

fn fit_nll(scores: &ScoreSet) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = nll_at_log_t(scores, c)?;
    let mut fd = nll_at_log_t(scores, d)?;
    while b - a > LOG_T_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll_at_log_t(scores, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll_at_log_t(scores, d)?;
        }
    }
    let (mut best_log_t, mut best) = if fc <= fd { (c, fc) } else { (d, fd) };
    for edge in [a, b] {
        let f = nll_at_log_t(scores, edge)?;
        if f < best {
            best = f;
            best_log_t = edge;
        }
    }
    if nll_at_log_t(scores, 0.0)? <= best {
        return Ok(1.0);
    }
    Ok(best_log_t.exp())
}

fn auroc_at(scores: &ScoreSet, t: f64) -> Result<f64> {
    Ok(metrics::auroc(&softmax_confidence(&scale(scores, t)?)?)?)
}

/// Log-spaced temperatures covering `[MIN_TEMPERATURE, MAX_TEMPERATURE]`.
pub fn temperature_grid(points: usize) -> Vec<f64> {
    let (lo, hi) = (MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

fn fit_auroc(scores: &ScoreSet) -> Result<f64> {
    let mut best_t = 1.0;
    let mut best = auroc_at(scores, 1.0)?;
    for t in temperature_grid(AUROC_GRID_POINTS) {
        let value = auroc_at(scores, t)?;
        if value > best {
            best = value;
            best_t = t;
        }
    }
    Ok(best_t)
}
