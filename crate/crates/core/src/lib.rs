//! Confidence estimation toolkit: failure-prediction and calibration metrics,
//! temperature scaling, calibration losses on a small dense network, and
//! flat-minima training (SAM, SWA and their combination) with a synthetic
//! experiment harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod nnkit;
pub mod optim;
pub mod posthoc;
pub mod scores;
