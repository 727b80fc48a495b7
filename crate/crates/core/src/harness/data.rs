//! Synthetic classification data and severity-graded input shift.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::matrix::Matrix;
use crate::scores::SplitIndices;

/// Distance of every Gaussian-mixture class mean from the origin.
pub const MIXTURE_RADIUS: f64 = 2.0;
/// Within-class standard deviation at zero overlap.
pub const MIN_CLASS_STD: f64 = 0.05;
/// Noise standard deviation per severity level, as a fraction of the
/// feature's standard deviation.
pub const NOISE_PER_LEVEL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GaussMixture,
    TwoMoons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub generator: Generator,
    pub class_count: usize,
    pub input_dim: usize,
    pub n_samples: usize,
    /// Extra within-class spread; larger values raise the Bayes error.
    pub overlap: f64,
    /// Gaussian components per class for `gauss_mixture`; above 1 the class
    /// boundaries are no longer linear.
    pub modes_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub generator: Generator,
    pub class_count: usize,
    pub overlap: f64,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            inputs: Matrix::zeros(0, self.inputs.cols()),
            labels: Vec::new(),
            generator: self.generator,
            class_count: self.class_count,
            overlap: self.overlap,
            seed: self.seed,
        }
    }

    /// Train, validation and test parts for a split of this dataset.
    pub fn partition(&self, split: &SplitIndices) -> (Self, Self, Self) {
        (
            self.select(&split.train),
            self.select(&split.val),
            self.select(&split.test),
        )
    }

    /// Per-feature mean and standard deviation.
    pub fn feature_moments(&self) -> Vec<(f64, f64)> {
        let n = self.len().max(1) as f64;
        (0..self.inputs.cols())
            .map(|j| {
                let mean = self.inputs.iter_rows().map(|r| r[j]).sum::<f64>() / n;
                let var = self.inputs.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }
}

/// Seeded synthetic dataset with class-balanced labels.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticDataset> {
    let k = config.class_count;
    if k < 2 {
        return Err(HarnessError::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    if config.n_samples < k {
        return Err(HarnessError::InvalidConfig(format!(
            "{} samples cannot cover {k} classes",
            config.n_samples
        )));
    }
    if !(config.overlap >= 0.0 && config.overlap.is_finite()) {
        return Err(HarnessError::InvalidConfig(format!(
            "overlap {} must be >= 0",
            config.overlap
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels: Vec<usize> = (0..config.n_samples).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let inputs = match config.generator {
        Generator::GaussMixture => gauss_mixture(config, &labels, &mut rng)?,
        Generator::TwoMoons => two_moons(config, &labels, &mut rng)?,
    };
    Ok(SyntheticDataset {
        inputs,
        labels,
        generator: config.generator,
        class_count: k,
        overlap: config.overlap,
        seed: config.seed,
    })
}

fn gauss_mixture(config: &GeneratorConfig, labels: &[usize], rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let d = config.input_dim;
    if d == 0 {
        return Err(HarnessError::InvalidConfig("input_dim must be >= 1".into()));
    }
    let modes = config.modes_per_class;
    if modes == 0 {
        return Err(HarnessError::InvalidConfig("modes_per_class must be >= 1".into()));
    }
    let means: Vec<Vec<f64>> = (0..config.class_count * modes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * MIXTURE_RADIUS / norm).collect()
        })
        .collect();
    let std = MIN_CLASS_STD + config.overlap;
    let mut data = Vec::with_capacity(labels.len() * d);
    for &y in labels {
        let mode = if modes > 1 { rng.random_range(0..modes) } else { 0 };
        for mean in &means[y * modes + mode] {
            data.push(mean + std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Matrix::from_vec(labels.len(), d, data).expect("shape"))
}

fn two_moons(config: &GeneratorConfig, labels: &[usize], rng: &mut ChaCha8Rng) -> Result<Matrix> {
    if config.class_count != 2 || config.input_dim < 2 {
        return Err(HarnessError::InvalidConfig(
            "two_moons needs exactly 2 classes and input_dim >= 2".into(),
        ));
    }
    let d = config.input_dim;
    let noise = MIN_CLASS_STD + config.overlap;
    let mut data = Vec::with_capacity(labels.len() * d);
    for &y in labels {
        let angle = rng.random_range(0.0..PI);
        let (x, z) = if y == 0 {
            (angle.cos(), angle.sin())
        } else {
            (1.0 - angle.cos(), 0.5 - angle.sin())
        };
        data.push(x + noise * rng.sample::<f64, _>(StandardNormal));
        data.push(z + noise * rng.sample::<f64, _>(StandardNormal));
        for _ in 2..d {
            data.push(noise * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Matrix::from_vec(labels.len(), d, data).expect("shape"))
}

// ---------------------------------------------------------------------------
// Shift
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    GaussianNoise,
    FeatureScale,
    Rotation,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 3] = [ShiftKind::GaussianNoise, ShiftKind::FeatureScale, ShiftKind::Rotation];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::GaussianNoise => "gaussian_noise",
            ShiftKind::FeatureScale => "feature_scale",
            ShiftKind::Rotation => "rotation",
        }
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShiftKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::UnknownShift(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub severity: u8,
}

impl ShiftSpec {
    pub const MAX_SEVERITY: u8 = 5;

    pub fn new(kind: ShiftKind, severity: u8) -> Result<Self> {
        if !(1..=Self::MAX_SEVERITY).contains(&severity) {
            return Err(HarnessError::InvalidConfig(format!(
                "severity {severity} outside 1..=5"
            )));
        }
        Ok(Self { kind, severity })
    }

    /// Perturbation size: noise std in feature-std units, relative scale
    /// change, or rotation angle in radians.
    pub fn magnitude(&self) -> f64 {
        let s = f64::from(self.severity);
        match self.kind {
            ShiftKind::GaussianNoise => NOISE_PER_LEVEL * s,
            ShiftKind::FeatureScale => 0.25 * s,
            ShiftKind::Rotation => s * PI / 30.0,
        }
    }
}

/// Perturbed copy of `dataset`; labels are untouched.
///
/// * `gaussian_noise`: adds `N(0, (magnitude * std_j)^2)` to feature `j`.
/// * `feature_scale`: stretches every feature about its mean by
///   `1 + magnitude`.
/// * `rotation`: rotates consecutive feature pairs by `magnitude` radians.
pub fn apply_shift(dataset: &SyntheticDataset, shift: &ShiftSpec, seed: u64) -> Result<SyntheticDataset> {
    let shift = ShiftSpec::new(shift.kind, shift.severity)?;
    let magnitude = shift.magnitude();
    let moments = dataset.feature_moments();
    let mut inputs = dataset.inputs.clone();
    let d = inputs.cols();
    match shift.kind {
        ShiftKind::GaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::from(shift.severity));
            for i in 0..inputs.rows() {
                for (v, &(_, std)) in inputs.row_mut(i).iter_mut().zip(&moments) {
                    *v += magnitude * std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        ShiftKind::FeatureScale => {
            for i in 0..inputs.rows() {
                for (v, &(mean, _)) in inputs.row_mut(i).iter_mut().zip(&moments) {
                    *v = mean + (*v - mean) * (1.0 + magnitude);
                }
            }
        }
        ShiftKind::Rotation => {
            let (sin, cos) = magnitude.sin_cos();
            for i in 0..inputs.rows() {
                let row = inputs.row_mut(i);
                for j in (0..d.saturating_sub(1)).step_by(2) {
                    let (a, b) = (row[j], row[j + 1]);
                    row[j] = cos * a - sin * b;
                    row[j + 1] = sin * a + cos * b;
                }
            }
        }
    }
    Ok(SyntheticDataset {
        inputs,
        labels: dataset.labels.clone(),
        generator: dataset.generator,
        class_count: dataset.class_count,
        overlap: dataset.overlap,
        seed: dataset.seed,
    })
}
