//! Experiment recipes: the method roster and a flat TOML configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{Generator, GeneratorConfig, ShiftKind};
use super::{HarnessError, Result};
use crate::nnkit::{Activation, LossKind, LossSpec, NetworkSpec};
use crate::optim::{LrSchedule, SamConfig, TrainConfig, TrainMethod};
use crate::posthoc::{FitSplit, TsObjective};
use crate::scores::SplitSpec;

/// One row of a comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Mixup,
    Ls,
    Focal,
    Cskd,
    L1,
    /// Baseline network with a temperature fitted for NLL on validation data.
    TsValid,
    /// Baseline network with the temperature that maximizes test AUROC.
    TsOptimal,
    Sam,
    Swa,
    Fmfp,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Baseline,
        Method::Mixup,
        Method::Ls,
        Method::Focal,
        Method::Cskd,
        Method::L1,
        Method::TsValid,
        Method::TsOptimal,
        Method::Sam,
        Method::Swa,
        Method::Fmfp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Mixup => "mixup",
            Method::Ls => "ls",
            Method::Focal => "focal",
            Method::Cskd => "cskd",
            Method::L1 => "l1",
            Method::TsValid => "ts-valid",
            Method::TsOptimal => "ts-optimal",
            Method::Sam => "sam",
            Method::Swa => "swa",
            Method::Fmfp => "fmfp",
        }
    }

    /// Optimizer and loss that produce this method's network.
    pub fn training(self) -> (TrainMethod, LossKind) {
        match self {
            Method::Baseline | Method::TsValid | Method::TsOptimal => (TrainMethod::Baseline, LossKind::Ce),
            Method::Mixup => (TrainMethod::Baseline, LossKind::CeMixup),
            Method::Ls => (TrainMethod::Baseline, LossKind::Ls),
            Method::Focal => (TrainMethod::Baseline, LossKind::Focal),
            Method::Cskd => (TrainMethod::Baseline, LossKind::Cskd),
            Method::L1 => (TrainMethod::Baseline, LossKind::LpNorm),
            Method::Sam => (TrainMethod::Sam, LossKind::Ce),
            Method::Swa => (TrainMethod::Swa, LossKind::Ce),
            Method::Fmfp => (TrainMethod::Fmfp, LossKind::Ce),
        }
    }

    /// Post-hoc temperature fit applied after training, if any.
    pub fn temperature_fit(self) -> Option<(FitSplit, TsObjective)> {
        match self {
            Method::TsValid => Some((FitSplit::Validation, TsObjective::Nll)),
            Method::TsOptimal => Some((FitSplit::Test, TsObjective::Auroc)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::UnknownMethod(s.to_string()))
    }
}

/// Mini-batch size of the toy recipe. At 128 a 1200-sample training set gets
/// only 400 updates in 40 epochs, too few for the network to fit its training
/// set, and nothing separates the methods.
pub const TOY_BATCH_SIZE: usize = 32;
/// SAM radius of the toy recipe: the largest tried value that trains stably.
/// At 0.05 SAM is indistinguishable from SGD on this network; from 2.0 up
/// training collapses.
pub const TOY_RHO: f64 = 1.0;

/// Everything needed to rerun an experiment. Missing keys take the defaults
/// below, so an empty file is a valid recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRecipe {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,

    pub generator: Generator,
    pub class_count: usize,
    pub input_dim: usize,
    pub n_samples: usize,
    pub overlap: f64,
    pub modes_per_class: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,

    pub hidden: Vec<usize>,
    pub activation: Activation,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,

    pub rho: f64,
    pub swa_start: usize,
    pub swa_cycle: usize,
    /// Cyclical schedule used from `swa_start` on; with `swa_cycle = 1` it is
    /// the constant `swa_lr`.
    pub swa_lr: f64,
    pub swa_lr_min: f64,

    pub epsilon: f64,
    pub gamma: f64,
    pub mixup_alpha: f64,
    pub cskd_lambda: f64,
    pub cskd_temperature: f64,
    pub lp_lambda: f64,
    pub lp_p: f64,

    pub ece_bins: usize,
    pub shift_kinds: Vec<ShiftKind>,
    /// Record test accuracy and AUROC after every epoch.
    pub trace_test: bool,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        let loss = LossSpec::default();
        Self {
            methods: vec![Method::Baseline, Method::Ls, Method::Sam, Method::Swa, Method::Fmfp],
            seeds: vec![0, 1, 2, 3, 4],
            generator: Generator::GaussMixture,
            class_count: 8,
            input_dim: 16,
            n_samples: 3000,
            overlap: 0.75,
            modes_per_class: 1,
            train_fraction: 0.4,
            val_fraction: 0.1,
            test_fraction: 0.5,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 40,
            batch_size: TOY_BATCH_SIZE,
            lr: 0.1,
            milestones: vec![16, 26, 34],
            lr_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            rho: TOY_RHO,
            swa_start: 24,
            swa_cycle: 1,
            swa_lr: 0.01,
            swa_lr_min: 0.001,
            epsilon: loss.epsilon,
            gamma: loss.gamma,
            mixup_alpha: loss.alpha,
            cskd_lambda: loss.lambda_cls,
            cskd_temperature: loss.temperature,
            lp_lambda: loss.lambda,
            lp_p: loss.p,
            ece_bins: crate::metrics::DEFAULT_ECE_BINS,
            shift_kinds: vec![ShiftKind::GaussianNoise],
            trace_test: true,
        }
    }
}

impl TrainRecipe {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let recipe: Self = toml::from_str(text).map_err(|e| HarnessError::Recipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("recipe serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds listed".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("duplicate seeds".into());
        }
        if self.ece_bins == 0 {
            return bad("ece_bins must be >= 1".into());
        }
        self.split(0).validate()?;
        self.network().validate()?;
        for &method in &self.methods {
            self.train_config(method, 0).validate()?;
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.input_dim,
            hidden_dims: self.hidden.clone(),
            class_count: self.class_count,
            activation: self.activation,
        }
    }

    pub fn generator_config(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            generator: self.generator,
            class_count: self.class_count,
            input_dim: self.input_dim,
            n_samples: self.n_samples,
            overlap: self.overlap,
            modes_per_class: self.modes_per_class,
            seed,
        }
    }

    pub fn split(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            seed,
        }
    }

    pub fn loss(&self, kind: LossKind) -> LossSpec {
        LossSpec {
            kind,
            epsilon: self.epsilon,
            gamma: self.gamma,
            alpha: self.mixup_alpha,
            lambda_cls: self.cskd_lambda,
            temperature: self.cskd_temperature,
            lambda: self.lp_lambda,
            p: self.lp_p,
        }
    }

    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let (train_method, kind) = method.training();
        TrainConfig {
            method: train_method,
            loss: self.loss(kind),
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: LrSchedule::Step {
                initial: self.lr,
                milestones: self.milestones.clone(),
                factor: self.lr_factor,
            },
            swa_schedule: LrSchedule::Cyclical {
                base: self.swa_lr_min,
                peak: self.swa_lr,
                cycle_len: self.swa_cycle,
            },
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            sam: SamConfig { rho: self.rho },
            swa_start: self.swa_start,
            swa_cycle: self.swa_cycle,
            seed,
        }
    }
}
