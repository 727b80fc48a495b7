use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::loss::{mixup_batch, sample_mixup_lambda, Batch, LossKind, LossSpec};
use super::network::{forward, loss_with_teacher, teacher_distribution};
use super::params::NetworkSpec;
use super::Result;
use crate::matrix::Matrix;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Samples with a logit this close to zero sit on the L_p kink and are left
/// out of the check.
pub const LP_KINK_MARGIN: f64 = 1e-6;
const BATCH_ROWS: usize = 6;
/// Denominator floor for the relative error of near-zero gradients.
const REL_ERR_FLOOR: f64 = 1e-6;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn random_batch(spec: &NetworkSpec, loss: &LossSpec, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let k = spec.class_count;
    let labels: Vec<usize> = (0..BATCH_ROWS).map(|_| rng.random_range(0..k)).collect();
    let batch = Batch::one_hot(random_matrix(rng, BATCH_ROWS, spec.input_dim), &labels, k)?;
    match loss.kind {
        LossKind::CeMixup => {
            let perm: Vec<usize> = (0..BATCH_ROWS).rev().collect();
            let lambda = sample_mixup_lambda(rng, loss.alpha)?;
            mixup_batch(&batch, &batch.select(&perm), lambda)
        }
        LossKind::Cskd => batch.with_pairs(random_matrix(rng, BATCH_ROWS, spec.input_dim)),
        _ => Ok(batch),
    }
}

/// Worst relative error between the analytic gradient and central finite
/// differences, on a randomly initialized network and batch drawn from `seed`.
///
/// For CS-KD the partner distribution is frozen at the unperturbed parameters,
/// matching the stop-gradient used by the analytic gradient.
pub fn grad_check(spec: &NetworkSpec, loss: &LossSpec, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = spec.init_params(rng.random())?;
    for v in params.values_mut() {
        *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let mut batch = random_batch(spec, loss, &mut rng)?;

    if loss.kind == LossKind::LpNorm {
        let logits = forward(spec, &params, &batch.inputs)?;
        let keep: Vec<usize> = (0..batch.len())
            .filter(|&i| logits.row(i).iter().all(|z| z.abs() >= LP_KINK_MARGIN))
            .collect();
        batch = batch.select(&keep);
    }

    let teacher = match (&batch.paired_inputs, loss.kind) {
        (Some(paired), LossKind::Cskd) => Some(teacher_distribution(spec, &params, paired, loss.temperature)?),
        _ => None,
    };
    let (_, analytic) = loss_with_teacher(spec, &params, &batch, loss, teacher.as_ref())?;

    let mut worst: f64 = 0.0;
    for j in 0..params.len() {
        let original = params.values()[j];
        params.values_mut()[j] = original + GRAD_CHECK_STEP;
        let (up, _) = loss_with_teacher(spec, &params, &batch, loss, teacher.as_ref())?;
        params.values_mut()[j] = original - GRAD_CHECK_STEP;
        let (down, _) = loss_with_teacher(spec, &params, &batch, loss, teacher.as_ref())?;
        params.values_mut()[j] = original;

        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let exact = analytic.values()[j];
        let denom = exact.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        worst = worst.max((exact - numeric).abs() / denom);
    }
    Ok(worst)
}
