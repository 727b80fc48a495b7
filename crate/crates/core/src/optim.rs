//! SGD with momentum, sharpness-aware steps, weight averaging and the
//! combined flat-minima trainer.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::metrics;
use crate::nnkit::{
    forward, loss_and_grad, mixup_batch, sample_mixup_lambda, Batch, LossKind, LossSpec, NetworkSpec, NnError,
    ParamVector,
};
use crate::scores::predict_row;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = OptimError> = std::result::Result<T, E>;

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub momentum_buffer: ParamVector,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: f64,
}

impl SgdState {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;

    pub fn new(params: &ParamVector, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum_buffer: ParamVector::zeros_like(params),
            momentum,
            weight_decay,
            lr,
        }
    }
}

/// `g = grad + wd * params; buf = momentum * buf + g; params -= lr * buf`.
pub fn sgd_step(params: &mut ParamVector, grad: &ParamVector, state: &mut SgdState) -> Result<()> {
    if !params.same_layout(grad) || !params.same_layout(&state.momentum_buffer) {
        return Err(OptimError::LayoutMismatch);
    }
    if !grad.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    if !(state.lr > 0.0) {
        return Err(OptimError::InvalidConfig(format!(
            "learning rate {} must be > 0",
            state.lr
        )));
    }
    let buf = state.momentum_buffer.values_mut();
    for ((p, &g), b) in params.values_mut().iter_mut().zip(grad.values()).zip(buf) {
        let g = g + state.weight_decay * *p;
        *b = state.momentum * *b + g;
        *p -= state.lr * *b;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// SAM
// ---------------------------------------------------------------------------

/// Neighborhood radius of the sharpness-aware step. The weight penalty of the
/// min-max objective is carried by [`SgdState::weight_decay`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamConfig {
    pub rho: f64,
}

impl SamConfig {
    pub const DEFAULT_RHO: f64 = 0.05;
}

impl Default for SamConfig {
    fn default() -> Self {
        Self { rho: Self::DEFAULT_RHO }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub epsilon: Vec<f64>,
    /// The gradient was zero and `rho > 0`; `epsilon` is the zero vector.
    pub zero_gradient: bool,
}

/// `rho * grad / ||grad||_2`, or zero when the gradient vanishes.
pub fn sam_perturbation(grad: &[f64], rho: f64) -> Result<Perturbation> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(OptimError::InvalidConfig(format!("rho {rho} must be finite and >= 0")));
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    if rho == 0.0 || norm == 0.0 {
        if norm == 0.0 && rho > 0.0 {
            log::debug!("zero gradient: SAM perturbation set to zero");
        }
        return Ok(Perturbation {
            epsilon: vec![0.0; grad.len()],
            zero_gradient: norm == 0.0 && rho > 0.0,
        });
    }
    let scale = rho / norm;
    Ok(Perturbation {
        epsilon: grad.iter().map(|g| g * scale).collect(),
        zero_gradient: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Loss at the unperturbed parameters.
    pub loss: f64,
    pub zero_gradient: bool,
}

/// Two-pass sharpness-aware step for an arbitrary objective: gradient at
/// `params`, ascend to `params + epsilon`, take the gradient there and apply
/// it with [`sgd_step`] at the original point.
pub fn sam_step_with<F>(
    params: &mut ParamVector,
    mut objective: F,
    sam: &SamConfig,
    sgd: &mut SgdState,
) -> Result<StepOutcome>
where
    F: FnMut(&ParamVector) -> Result<(f64, ParamVector)>,
{
    let (loss, grad) = objective(params)?;
    if sam.rho == 0.0 {
        sgd_step(params, &grad, sgd)?;
        return Ok(StepOutcome {
            loss,
            zero_gradient: false,
        });
    }
    let perturbation = sam_perturbation(grad.values(), sam.rho)?;
    let mut shifted = params.clone();
    for (p, e) in shifted.values_mut().iter_mut().zip(&perturbation.epsilon) {
        *p += e;
    }
    let (_, sharp_grad) = objective(&shifted)?;
    sgd_step(params, &sharp_grad, sgd)?;
    Ok(StepOutcome {
        loss,
        zero_gradient: perturbation.zero_gradient,
    })
}

/// Sharpness-aware step on the network loss for one batch.
pub fn sam_step(
    spec: &NetworkSpec,
    params: &mut ParamVector,
    batch: &Batch,
    loss: &LossSpec,
    sam: &SamConfig,
    sgd: &mut SgdState,
) -> Result<StepOutcome> {
    sam_step_with(params, |p| Ok(loss_and_grad(spec, p, batch, loss)?), sam, sgd)
}

// ---------------------------------------------------------------------------
// SWA
// ---------------------------------------------------------------------------

/// Running mean of checkpoints taken at epochs `start_epoch`,
/// `start_epoch + cycle_length`, ...
#[derive(Debug, Clone, PartialEq)]
pub struct SwaState {
    averaged: Option<ParamVector>,
    n: usize,
    pub start_epoch: usize,
    pub cycle_length: usize,
}

impl SwaState {
    pub fn new(start_epoch: usize, cycle_length: usize) -> Result<Self> {
        if cycle_length == 0 {
            return Err(OptimError::InvalidConfig("SWA cycle length must be >= 1".into()));
        }
        Ok(Self {
            averaged: None,
            n: 0,
            start_epoch,
            cycle_length,
        })
    }

    pub fn averaged(&self) -> Option<&ParamVector> {
        self.averaged.as_ref()
    }

    pub fn into_averaged(self) -> Option<ParamVector> {
        self.averaged
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Whether the checkpoint at the end of 0-based `epoch` is absorbed.
    pub fn should_absorb(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch && (epoch - self.start_epoch).is_multiple_of(self.cycle_length)
    }

    /// Absorbs `params`: `avg = (avg * n + params) / (n + 1)`.
    pub fn update(&mut self, params: &ParamVector) -> Result<()> {
        match &mut self.averaged {
            None => self.averaged = Some(params.clone()),
            Some(avg) => {
                if !avg.same_layout(params) {
                    return Err(OptimError::LayoutMismatch);
                }
                let n = self.n as f64;
                for (a, &p) in avg.values_mut().iter_mut().zip(params.values()) {
                    *a = (*a * n + p) / (n + 1.0);
                }
            }
        }
        self.n += 1;
        Ok(())
    }
}

/// Functional form of [`SwaState::update`].
pub fn swa_update(mut state: SwaState, params: &ParamVector) -> Result<SwaState> {
    state.update(params)?;
    Ok(state)
}

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `initial * factor^(number of milestones <= epoch)`.
    Step {
        initial: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Linear descent from `peak` at the start of each cycle to `base` at its
    /// last epoch.
    Cyclical { base: f64, peak: f64, cycle_len: usize },
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule::Step {
            initial: lr,
            milestones: Vec::new(),
            factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LrSchedule::Step { initial, factor, .. } => *initial > 0.0 && *factor > 0.0,
            LrSchedule::Cyclical { base, peak, cycle_len } => *base > 0.0 && *peak > 0.0 && *cycle_len >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(OptimError::InvalidConfig(format!("invalid schedule {self:?}")))
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Step {
                initial,
                milestones,
                factor,
            } => {
                let drops = milestones.iter().filter(|&&m| m <= epoch).count();
                initial * factor.powi(drops as i32)
            }
            LrSchedule::Cyclical { base, peak, cycle_len } => {
                if *cycle_len <= 1 {
                    return *peak;
                }
                let pos = (epoch % cycle_len) as f64 / (*cycle_len - 1) as f64;
                peak - (peak - base) * pos
            }
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    schedule.lr_at(epoch)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    /// Plain SGD.
    Baseline,
    Sam,
    Swa,
    /// SAM updates with SWA averaging.
    Fmfp,
}

impl TrainMethod {
    pub fn uses_sam(self) -> bool {
        matches!(self, TrainMethod::Sam | TrainMethod::Fmfp)
    }

    pub fn uses_swa(self) -> bool {
        matches!(self, TrainMethod::Swa | TrainMethod::Fmfp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Schedule used from `swa_start` onwards by the averaging methods,
    /// indexed by epochs since `swa_start`.
    pub swa_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub sam: SamConfig,
    pub swa_start: usize,
    pub swa_cycle: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.validate()?;
        self.swa_schedule.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(OptimError::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        if !(self.sam.rho >= 0.0 && self.sam.rho.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("rho {} must be >= 0", self.sam.rho)));
        }
        if self.method.uses_swa() {
            if self.swa_start >= self.epochs {
                return Err(OptimError::InvalidConfig(format!(
                    "SWA start {} must be before the last epoch ({} epochs)",
                    self.swa_start, self.epochs
                )));
            }
            if self.swa_cycle == 0 {
                return Err(OptimError::InvalidConfig("SWA cycle length must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if self.method.uses_swa() && epoch >= self.swa_start {
            self.swa_schedule.lr_at(epoch - self.swa_start)
        } else {
            self.schedule.lr_at(epoch)
        }
    }
}

/// Borrowed inputs with integer labels.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
    pub test_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_params: ParamVector,
    pub swa_params: Option<ParamVector>,
    pub swa_count: usize,
    pub trace: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// Weights to evaluate: the average for the averaging methods, otherwise
    /// the last iterate.
    pub fn eval_params(&self) -> &ParamVector {
        self.swa_params.as_ref().unwrap_or(&self.final_params)
    }
}

/// Accuracy and AUROC of `params` on `data`; AUROC is `None` when every
/// prediction is correct or every prediction is wrong.
pub fn accuracy_and_auroc(
    spec: &NetworkSpec,
    params: &ParamVector,
    data: LabeledSet<'_>,
) -> Result<(f64, Option<f64>)> {
    let logits = forward(spec, params, data.inputs)?;
    let preds = logits
        .iter_rows()
        .zip(data.labels)
        .enumerate()
        .map(|(i, (z, &y))| predict_row(i, z, y))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| OptimError::Nn(NnError::NonFiniteLoss))?;
    let acc = preds.iter().filter(|p| p.is_correct).count() as f64 / preds.len().max(1) as f64;
    Ok((acc, metrics::auroc(&preds).ok()))
}

/// Same-class partner for every training sample in `order`, drawn uniformly
/// from the other members of the class when one exists.
fn pick_partners(labels: &[usize], by_class: &[Vec<usize>], rows: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    rows.iter()
        .map(|&i| {
            let members = &by_class[labels[i]];
            if members.len() < 2 {
                return i;
            }
            loop {
                let j = members[rng.random_range(0..members.len())];
                if j != i {
                    return j;
                }
            }
        })
        .collect()
}

/// Trains a fresh network from `seed`.
///
/// Every mini-batch gets a plain SGD step (baseline, swa) or a two-pass SAM
/// step (sam, fmfp). For the averaging methods the parameters at the end of
/// every epoch `e >= swa_start` with `(e - swa_start) % swa_cycle == 0` are
/// absorbed into the running mean.
pub fn fmfp_train(
    spec: &NetworkSpec,
    train: LabeledSet<'_>,
    test: Option<LabeledSet<'_>>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = spec.init_params(config.seed)?;
    fmfp_train_from(spec, params, train, test, config)
}

/// [`fmfp_train`] starting from the given parameters.
pub fn fmfp_train_from(
    spec: &NetworkSpec,
    mut params: ParamVector,
    train: LabeledSet<'_>,
    test: Option<LabeledSet<'_>>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = train.labels.len();
    if n == 0 || train.inputs.rows() != n {
        return Err(OptimError::InvalidConfig("training set is empty or ragged".into()));
    }
    let k = spec.class_count;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut aux_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aux_rng.set_stream(2);

    let mut by_class = vec![Vec::new(); k];
    for (i, &y) in train.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut sgd = SgdState::new(&params, config.schedule.lr_at(0), config.momentum, config.weight_decay);
    let mut swa = SwaState::new(config.swa_start, config.swa_cycle.max(1))?;
    let sam = if config.method.uses_sam() {
        config.sam
    } else {
        SamConfig { rho: 0.0 }
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        sgd.lr = config.lr_for_epoch(epoch);
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for rows in order.chunks(config.batch_size) {
            let labels: Vec<usize> = rows.iter().map(|&i| train.labels[i]).collect();
            let mut batch = Batch::one_hot(train.inputs.select_rows(rows), &labels, k)?;
            match config.loss.kind {
                LossKind::CeMixup => {
                    let lambda = sample_mixup_lambda(&mut aux_rng, config.loss.alpha)?;
                    let mut perm: Vec<usize> = (0..rows.len()).collect();
                    perm.shuffle(&mut aux_rng);
                    batch = mixup_batch(&batch, &batch.select(&perm), lambda)?;
                }
                LossKind::Cskd => {
                    let partners = pick_partners(train.labels, &by_class, rows, &mut aux_rng);
                    batch = batch.with_pairs(train.inputs.select_rows(&partners))?;
                }
                _ => {}
            }
            let outcome = match sam_step(spec, &mut params, &batch, &config.loss, &sam, &mut sgd) {
                Ok(o) => o,
                Err(OptimError::Nn(NnError::NonFiniteLoss)) | Err(OptimError::NonFiniteGradient) => {
                    return Err(OptimError::Diverged { epoch });
                }
                Err(e) => return Err(e),
            };
            loss_sum += outcome.loss * rows.len() as f64;
            seen += rows.len();
        }
        if !params.is_finite() {
            return Err(OptimError::Diverged { epoch });
        }
        if config.method.uses_swa() && swa.should_absorb(epoch) {
            swa.update(&params)?;
        }
        let (test_acc, test_auroc) = match test {
            Some(t) => {
                let (acc, auroc) = accuracy_and_auroc(spec, &params, t)?;
                (Some(acc), auroc)
            }
            None => (None, None),
        };
        trace.push(EpochRecord {
            epoch,
            lr: sgd.lr,
            train_loss: loss_sum / seen as f64,
            test_acc,
            test_auroc,
        });
    }

    let swa_count = swa.count();
    Ok(TrainOutcome {
        final_params: params,
        swa_params: if config.method.uses_swa() {
            swa.into_averaged()
        } else {
            None
        },
        swa_count,
        trace,
    })
}

/// `epoch,lr,train_loss,test_acc,test_auroc`; missing values are empty.
pub fn write_trace_csv<W: Write>(trace: &[EpochRecord], out: &mut W) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(out, "epoch,lr,train_loss,test_acc,test_auroc")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.train_loss,
            opt(r.test_acc),
            opt(r.test_auroc)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: &[f64]) -> ParamVector {
        ParamVector::flat(v.to_vec())
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut p = flat(&[1.0, -2.0]);
        let g = flat(&[0.5, 0.25]);
        let mut s = SgdState::new(&p, 0.1, 0.0, 0.0);
        sgd_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.values(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn momentum_unrolls_to_two_plus_m() {
        let (lr, m, g) = (0.1, 0.9, 0.7);
        let mut p = flat(&[0.0]);
        let mut s = SgdState::new(&p, lr, m, 0.0);
        for _ in 0..2 {
            sgd_step(&mut p, &flat(&[g]), &mut s).unwrap();
        }
        assert!((p.values()[0] + lr * g * (2.0 + m)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_toward_zero() {
        let mut p = flat(&[1.0, -3.0]);
        let mut s = SgdState::new(&p, 0.1, 0.0, 0.5);
        let mut prev = p.l2_norm();
        for _ in 0..5 {
            sgd_step(&mut p, &flat(&[0.0, 0.0]), &mut s).unwrap();
            assert!(p.l2_norm() < prev);
            prev = p.l2_norm();
        }
    }

    #[test]
    fn sgd_rejects_bad_gradients() {
        let mut p = flat(&[1.0]);
        let mut s = SgdState::new(&p, 0.1, 0.0, 0.0);
        assert!(matches!(
            sgd_step(&mut p, &flat(&[f64::NAN]), &mut s),
            Err(OptimError::NonFiniteGradient)
        ));
        assert!(matches!(
            sgd_step(&mut p, &flat(&[1.0, 2.0]), &mut s),
            Err(OptimError::LayoutMismatch)
        ));
    }

    #[test]
    fn sam_perturbation_hand_values() {
        let e = sam_perturbation(&[3.0, 4.0], 1.0).unwrap();
        assert!((e.epsilon[0] - 0.6).abs() < 1e-15 && (e.epsilon[1] - 0.8).abs() < 1e-15);
        assert_eq!(sam_perturbation(&[3.0, 4.0], 0.0).unwrap().epsilon, vec![0.0, 0.0]);
        let e = sam_perturbation(&[0.3, -1.2, 7.0], 2.0).unwrap();
        let norm = e.epsilon.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-12);
        let z = sam_perturbation(&[0.0, 0.0], 0.5).unwrap();
        assert!(z.zero_gradient);
        assert_eq!(z.epsilon, vec![0.0, 0.0]);
        assert!(sam_perturbation(&[1.0], -0.1).is_err());
    }

    #[test]
    fn sam_on_scalar_quadratic() {
        // L = theta^2 / 2, gradient theta.
        let mut p = flat(&[1.0]);
        let mut s = SgdState::new(&p, 1.0, 0.0, 0.0);
        let sam = SamConfig { rho: 0.1 };
        sam_step_with(&mut p, |q| Ok((q.values()[0].powi(2) / 2.0, q.clone())), &sam, &mut s).unwrap();
        assert!((p.values()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn swa_running_mean() {
        let mut s = SwaState::new(0, 1).unwrap();
        s.update(&flat(&[1.0, 2.0])).unwrap();
        assert_eq!(s.averaged().unwrap().values(), &[1.0, 2.0]);
        s.update(&flat(&[3.0, -2.0])).unwrap();
        assert_eq!(s.averaged().unwrap().values(), &[2.0, 0.0]);
        assert_eq!(s.count(), 2);
        assert!(matches!(s.update(&flat(&[1.0])), Err(OptimError::LayoutMismatch)));
    }

    #[test]
    fn swa_of_constant_is_constant() {
        let v = flat(&[0.1, -7.3, 1e-3]);
        let mut s = SwaState::new(0, 1).unwrap();
        for _ in 0..9 {
            s = swa_update(s, &v).unwrap();
        }
        for (a, b) in s.averaged().unwrap().values().iter().zip(v.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn swa_absorb_schedule() {
        let s = SwaState::new(3, 2).unwrap();
        let hits: Vec<usize> = (0..10).filter(|&e| s.should_absorb(e)).collect();
        assert_eq!(hits, vec![3, 5, 7, 9]);
        assert!(SwaState::new(0, 0).is_err());
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step {
            initial: 0.1,
            milestones: vec![8, 13, 17],
            factor: 0.1,
        };
        assert_eq!(s.lr_at(0), 0.1);
        assert!((s.lr_at(10) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(17) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn cyclical_schedule() {
        let s = LrSchedule::Cyclical {
            base: 0.01,
            peak: 0.05,
            cycle_len: 4,
        };
        for e in [0, 4, 8] {
            assert_eq!(lr_at(&s, e), 0.05);
        }
        assert!((s.lr_at(3) - 0.01).abs() < 1e-15);
        assert!(s.lr_at(1) < 0.05 && s.lr_at(1) > s.lr_at(2));
        assert!(LrSchedule::Cyclical {
            base: 0.0,
            peak: 0.1,
            cycle_len: 2
        }
        .validate()
        .is_err());
    }
}
