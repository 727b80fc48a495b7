use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::matrix::{log_softmax_row, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Ce,
    /// Cross-entropy against label-smoothed targets.
    Ls,
    Focal,
    /// Class-wise self-knowledge distillation.
    Cskd,
    /// Cross-entropy plus an L_p norm penalty on the logits.
    LpNorm,
    /// Cross-entropy on mixup-interpolated batches.
    CeMixup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Label-smoothing mass moved off the true class.
    pub epsilon: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Mixup Beta(alpha, alpha) parameter.
    pub alpha: f64,
    pub lambda_cls: f64,
    /// CS-KD softmax temperature.
    pub temperature: f64,
    /// Logit-norm penalty weight.
    pub lambda: f64,
    pub p: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Ce,
            epsilon: 0.05,
            gamma: 3.0,
            alpha: 0.2,
            lambda_cls: 1.0,
            temperature: 4.0,
            lambda: 0.01,
            p: 1.0,
        }
    }
}

impl LossSpec {
    pub fn of(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidLoss(msg));
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1)", self.epsilon));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be >= 0", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be > 0", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda_cls >= 0.0) {
            return bad("penalty weights must be >= 0".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("norm order {} must be >= 1", self.p));
        }
        Ok(())
    }

    /// Per-sample loss and its gradient with respect to the logits, for every
    /// kind except the CS-KD distillation term.
    pub(crate) fn row_loss(&self, logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        match self.kind {
            LossKind::Ce | LossKind::CeMixup | LossKind::Cskd => cross_entropy(logits, target),
            LossKind::Ls => {
                let smoothed = smooth_row(target, self.epsilon);
                cross_entropy(logits, &smoothed)
            }
            LossKind::Focal => focal(logits, target, self.gamma),
            LossKind::LpNorm => {
                let (ce, mut grad) = cross_entropy(logits, target);
                let (norm, norm_grad) = lp_norm(logits, self.p);
                for (g, ng) in grad.iter_mut().zip(norm_grad) {
                    *g += self.lambda * ng;
                }
                (ce + self.lambda * norm, grad)
            }
        }
    }
}

/// `-sum t_k log p_k`, gradient `p * sum(t) - t`.
pub(crate) fn cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let logp = log_softmax_row(logits);
    let mass: f64 = target.iter().sum();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&lp, &t) in logp.iter().zip(target) {
        if t != 0.0 {
            loss -= t * lp;
        }
        grad.push(lp.exp() * mass - t);
    }
    (loss, grad)
}

/// `sum_k t_k * -(1 - p_k)^gamma * log p_k`; reduces to cross-entropy at
/// `gamma = 0`.
fn focal(logits: &[f64], target: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax_row(logits);
    let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    let mut loss = 0.0;
    // a_k = t_k * p_k * d(term_k)/dp_k
    let mut a = vec![0.0; logits.len()];
    for k in 0..logits.len() {
        let t = target[k];
        if t == 0.0 {
            continue;
        }
        if gamma == 0.0 {
            loss -= t * logp[k];
            a[k] = -t;
            continue;
        }
        let q = 1.0 - p[k];
        let weight = q.powf(gamma);
        loss -= t * weight * logp[k];
        let slope = if q > 0.0 {
            gamma * q.powf(gamma - 1.0) * p[k] * logp[k]
        } else {
            0.0
        };
        a[k] = t * (slope - weight);
    }
    let total: f64 = a.iter().sum();
    let grad = a.iter().zip(&p).map(|(&ak, &pk)| ak - pk * total).collect();
    (loss, grad)
}

/// `||z||_p` and its (sub)gradient; the gradient at `z = 0` is taken as 0.
fn lp_norm(logits: &[f64], p: f64) -> (f64, Vec<f64>) {
    if p == 1.0 {
        let norm = logits.iter().map(|z| z.abs()).sum();
        let grad = logits
            .iter()
            .map(|&z| if z == 0.0 { 0.0 } else { z.signum() })
            .collect();
        return (norm, grad);
    }
    let norm = logits.iter().map(|z| z.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    if norm == 0.0 {
        return (0.0, vec![0.0; logits.len()]);
    }
    let scale = norm.powf(p - 1.0);
    let grad = logits
        .iter()
        .map(|&z| z.signum() * z.abs().powf(p - 1.0) / scale)
        .collect();
    (norm, grad)
}

fn smooth_row(target: &[f64], epsilon: f64) -> Vec<f64> {
    let others = epsilon / (target.len() - 1) as f64;
    target
        .iter()
        .map(|&t| t * (1.0 - epsilon) + (1.0 - t) * others)
        .collect()
}

/// Label-smoothed targets: `1 - epsilon` on the true class and
/// `epsilon / (K - 1)` elsewhere.
pub fn smooth_targets(labels: &[usize], class_count: usize, epsilon: f64) -> Result<Matrix> {
    if class_count < 2 {
        return Err(NnError::InvalidLoss(format!(
            "label smoothing needs K >= 2, got {class_count}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(NnError::InvalidLoss(format!("epsilon {epsilon} outside [0, 1)")));
    }
    let off = epsilon / (class_count - 1) as f64;
    let mut out = Matrix::zeros(labels.len(), class_count);
    for (i, &y) in labels.iter().enumerate() {
        if y >= class_count {
            return Err(NnError::InvalidBatch(format!("label {y} out of range")));
        }
        for k in 0..class_count {
            out.set(i, k, if k == y { 1.0 - epsilon } else { off });
        }
    }
    Ok(out)
}

/// Inputs with target distributions; `paired_inputs` carries the same-class
/// partner of every row for CS-KD.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub paired_inputs: Option<Matrix>,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(NnError::InvalidBatch(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        for (i, row) in targets.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&t| !(t >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(NnError::InvalidBatch(format!(
                    "target row {i} is not a probability distribution"
                )));
            }
        }
        Ok(Self {
            inputs,
            targets,
            paired_inputs: None,
        })
    }

    pub fn one_hot(inputs: Matrix, labels: &[usize], class_count: usize) -> Result<Self> {
        Self::new(inputs, smooth_targets(labels, class_count, 0.0)?)
    }

    pub fn with_pairs(mut self, paired: Matrix) -> Result<Self> {
        if paired.rows() != self.inputs.rows() || paired.cols() != self.inputs.cols() {
            return Err(NnError::InvalidBatch("paired inputs must match input shape".into()));
        }
        self.paired_inputs = Some(paired);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(rows),
            targets: self.targets.select_rows(rows),
            paired_inputs: self.paired_inputs.as_ref().map(|p| p.select_rows(rows)),
        }
    }
}

/// Mixup interpolation `lambda * a + (1 - lambda) * b` of inputs and targets.
pub fn mixup_batch(a: &Batch, b: &Batch, lambda: f64) -> Result<Batch> {
    if a.inputs.rows() != b.inputs.rows() || a.inputs.cols() != b.inputs.cols() || a.targets.cols() != b.targets.cols()
    {
        return Err(NnError::InvalidBatch("mixup batches differ in shape".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(NnError::InvalidBatch(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let mix = |x: &Matrix, y: &Matrix| {
        let data = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&u, &v)| lambda * u + (1.0 - lambda) * v)
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
    };
    Ok(Batch {
        inputs: mix(&a.inputs, &b.inputs),
        targets: mix(&a.targets, &b.targets),
        paired_inputs: None,
    })
}

/// One mixup coefficient drawn from Beta(alpha, alpha).
pub fn sample_mixup_lambda<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| NnError::InvalidLoss(e.to_string()))?;
    Ok(beta.sample(rng))
}
