use super::loss::{Batch, LossKind, LossSpec};
use super::params::{NetworkSpec, ParamVector};
use super::{NnError, Result};
use crate::matrix::{log_softmax_row, softmax_row, Matrix};

/// Weight and bias slices of one dense layer.
struct Layer<'a> {
    fan_in: usize,
    fan_out: usize,
    weight: &'a [f64],
    bias: &'a [f64],
}

fn layers<'a>(spec: &NetworkSpec, params: &'a ParamVector) -> Result<Vec<Layer<'a>>> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(NnError::DimensionMismatch(format!(
            "network needs {} parameters, got {}",
            spec.param_count(),
            params.len()
        )));
    }
    let values = params.values();
    let mut offset = 0;
    Ok(spec
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let weight = &values[offset..offset + fan_in * fan_out];
            offset += fan_in * fan_out;
            let bias = &values[offset..offset + fan_out];
            offset += fan_out;
            Layer {
                fan_in,
                fan_out,
                weight,
                bias,
            }
        })
        .collect())
}

fn affine(input: &Matrix, layer: &Layer<'_>) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), layer.fan_out);
    for (i, x) in input.iter_rows().enumerate() {
        let row = out.row_mut(i);
        for (o, slot) in row.iter_mut().enumerate() {
            let w = &layer.weight[o * layer.fan_in..(o + 1) * layer.fan_in];
            *slot = layer.bias[o] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

/// Activations of every layer: `acts[0]` is the input, the last entry the
/// logits.
fn forward_cached(spec: &NetworkSpec, layers: &[Layer<'_>], inputs: &Matrix) -> Vec<Matrix> {
    let mut acts = vec![inputs.clone()];
    for (l, layer) in layers.iter().enumerate() {
        let mut z = affine(acts.last().expect("input present"), layer);
        if l + 1 < layers.len() {
            z = z.map(|v| spec.activation.apply(v));
        }
        acts.push(z);
    }
    acts
}

fn check_inputs(spec: &NetworkSpec, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != spec.input_dim {
        return Err(NnError::DimensionMismatch(format!(
            "network expects {} input features, got {}",
            spec.input_dim,
            inputs.cols()
        )));
    }
    Ok(())
}

/// Logits for every input row.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    let layers = layers(spec, params)?;
    check_inputs(spec, inputs)?;
    Ok(forward_cached(spec, &layers, inputs).pop().expect("logits present"))
}

/// Reverse pass from `d loss / d logits` to the parameter gradient.
fn backward(
    spec: &NetworkSpec,
    layers: &[Layer<'_>],
    acts: &[Matrix],
    dlogits: Matrix,
    params: &ParamVector,
) -> ParamVector {
    let mut grad = ParamVector::zeros_like(params);
    let mut offsets = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for layer in layers {
        offsets.push(offset);
        offset += (layer.fan_in + 1) * layer.fan_out;
    }

    let mut delta = dlogits;
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input = &acts[l];
        let g = grad.values_mut();
        let (gw, gb) =
            g[offsets[l]..offsets[l] + (layer.fan_in + 1) * layer.fan_out].split_at_mut(layer.fan_in * layer.fan_out);
        for (d, x) in delta.iter_rows().zip(input.iter_rows()) {
            for o in 0..layer.fan_out {
                let d_o = d[o];
                if d_o == 0.0 {
                    continue;
                }
                gb[o] += d_o;
                for (w, &xi) in gw[o * layer.fan_in..(o + 1) * layer.fan_in].iter_mut().zip(x) {
                    *w += d_o * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = Matrix::zeros(delta.rows(), layer.fan_in);
        for (i, d) in delta.iter_rows().enumerate() {
            let out = prev.row_mut(i);
            for (o, &d_o) in d.iter().enumerate() {
                if d_o == 0.0 {
                    continue;
                }
                let w = &layer.weight[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (slot, &wj) in out.iter_mut().zip(w) {
                    *slot += d_o * wj;
                }
            }
            for (slot, &y) in out.iter_mut().zip(input.row(i)) {
                *slot *= spec.activation.derivative_from_output(y);
            }
        }
        delta = prev;
    }
    grad
}

/// Softened distribution `softmax(logits / T)` of the partner inputs.
pub fn teacher_distribution(
    spec: &NetworkSpec,
    params: &ParamVector,
    paired_inputs: &Matrix,
    temperature: f64,
) -> Result<Matrix> {
    let logits = forward(spec, params, paired_inputs)?;
    Ok(softened(&logits, temperature))
}

fn softened(logits: &Matrix, temperature: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for (i, z) in logits.iter_rows().enumerate() {
        let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
        out.row_mut(i).copy_from_slice(&softmax_row(&scaled));
    }
    out
}

/// `lambda_cls * T^2 * KL(q || softmax(z / T))` and its gradient in `z`,
/// with `q` held constant.
fn distillation_row(logits: &[f64], teacher: &[f64], temperature: f64, weight: f64) -> (f64, Vec<f64>) {
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    let logp = log_softmax_row(&scaled);
    let mass: f64 = teacher.iter().sum();
    let mut kl = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&lp, &q) in logp.iter().zip(teacher) {
        if q > 0.0 {
            kl += q * (q.ln() - lp);
        }
        grad.push(weight * temperature * (lp.exp() * mass - q));
    }
    (weight * temperature * temperature * kl, grad)
}

/// Batch-mean loss and parameter gradient.
///
/// For CS-KD the partner distribution is computed from `params` and then
/// treated as a constant, so no gradient flows through the partner branch.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &Batch,
    loss: &LossSpec,
) -> Result<(f64, ParamVector)> {
    let teacher = match loss.kind {
        LossKind::Cskd => {
            let paired = batch.paired_inputs.as_ref().ok_or(NnError::MissingPairs)?;
            Some(teacher_distribution(spec, params, paired, loss.temperature)?)
        }
        _ => None,
    };
    loss_with_teacher(spec, params, batch, loss, teacher.as_ref())
}

/// [`loss_and_grad`] with an explicit, fixed CS-KD partner distribution.
pub fn loss_with_teacher(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &Batch,
    loss: &LossSpec,
    teacher: Option<&Matrix>,
) -> Result<(f64, ParamVector)> {
    loss.validate()?;
    let layers = layers(spec, params)?;
    check_inputs(spec, &batch.inputs)?;
    if batch.is_empty() {
        return Err(NnError::InvalidBatch("empty batch".into()));
    }
    if batch.targets.cols() != spec.class_count {
        return Err(NnError::DimensionMismatch(format!(
            "targets have {} classes, network has {}",
            batch.targets.cols(),
            spec.class_count
        )));
    }
    let teacher = match (loss.kind, teacher) {
        (LossKind::Cskd, Some(t)) if t.rows() == batch.len() && t.cols() == spec.class_count => Some(t),
        (LossKind::Cskd, _) => return Err(NnError::MissingPairs),
        _ => None,
    };

    let acts = forward_cached(spec, &layers, &batch.inputs);
    let logits = acts.last().expect("logits present");
    let b = batch.len() as f64;
    let mut total = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for (i, (z, t)) in logits.iter_rows().zip(batch.targets.iter_rows()).enumerate() {
        let (mut l, mut g) = loss.row_loss(z, t);
        if let Some(teacher) = teacher {
            let (kd, kd_grad) = distillation_row(z, teacher.row(i), loss.temperature, loss.lambda_cls);
            l += kd;
            for (gi, k) in g.iter_mut().zip(kd_grad) {
                *gi += k;
            }
        }
        total += l;
        for (slot, gi) in dlogits.row_mut(i).iter_mut().zip(g) {
            *slot = gi / b;
        }
    }
    let mean = total / b;
    if !mean.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let grad = backward(spec, &layers, &acts, dlogits, params);
    if !grad.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    Ok((mean, grad))
}

/// CS-KD objective on paired batches: cross-entropy on `inputs` plus the
/// temperature-softened KL from the partner rows to the input rows.
pub fn cskd_loss(
    spec: &NetworkSpec,
    params: &ParamVector,
    inputs: &Matrix,
    paired_inputs: &Matrix,
    labels: &[usize],
    temperature: f64,
    lambda_cls: f64,
) -> Result<(f64, ParamVector)> {
    if paired_inputs.rows() != inputs.rows() || labels.len() != inputs.rows() {
        return Err(NnError::MissingPairs);
    }
    let batch = Batch::one_hot(inputs.clone(), labels, spec.class_count)?.with_pairs(paired_inputs.clone())?;
    let loss = LossSpec {
        kind: LossKind::Cskd,
        temperature,
        lambda_cls,
        ..LossSpec::default()
    };
    loss_and_grad(spec, params, &batch, &loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::params::Activation;

    fn tiny() -> (NetworkSpec, ParamVector) {
        let spec = NetworkSpec {
            input_dim: 2,
            hidden_dims: vec![],
            class_count: 2,
            activation: Activation::Tanh,
        };
        // W = [[1, 2], [3, 4]], b = [0.5, -1].
        let params = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0], spec.layout()).unwrap();
        (spec, params)
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let spec = NetworkSpec::new(3, vec![4, 4], 5);
        let params = ParamVector::zeros_like(&spec.init_params(0).unwrap());
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.3]]).unwrap();
        let z = forward(&spec, &params, &x).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        assert!((softmax_row(z.row(0))[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_layer_hand_affine_map() {
        let (spec, params) = tiny();
        let x = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        let z = forward(&spec, &params, &x).unwrap();
        assert_eq!(z.row(0), &[1.0 - 2.0 + 0.5, 3.0 - 4.0 - 1.0]);
        assert_eq!(z.row(1), &[0.5 + 4.0 + 0.5, 1.5 + 8.0 - 1.0]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let spec = NetworkSpec::new(3, vec![6], 4);
        let params = spec.init_params(5).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.0, 2.0], [0.5, 0.5, -0.5]]).unwrap();
        let all = forward(&spec, &params, &x).unwrap();
        for i in 0..3 {
            let one = forward(&spec, &params, &x.select_rows(&[i])).unwrap();
            assert_eq!(one.row(0), all.row(i));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (spec, params) = tiny();
        assert!(matches!(
            forward(&spec, &params, &Matrix::zeros(1, 3)),
            Err(NnError::DimensionMismatch(_))
        ));
        let other = NetworkSpec::new(2, vec![3], 2);
        assert!(forward(&other, &params, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn cskd_without_pairs_is_rejected() {
        let (spec, params) = tiny();
        let batch = Batch::one_hot(Matrix::zeros(2, 2), &[0, 1], 2).unwrap();
        assert!(matches!(
            loss_and_grad(&spec, &params, &batch, &LossSpec::of(LossKind::Cskd)),
            Err(NnError::MissingPairs)
        ));
    }

    #[test]
    fn cskd_two_class_hand_value() {
        // Logits for x: [1.5, 2]; for x': [3.5, 6].
        let (spec, params) = tiny();
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let xp = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let (loss, _) = cskd_loss(&spec, &params, &x, &xp, &[0], 2.0, 0.5).unwrap();

        let sig = |a: f64, b: f64| a.exp() / (a.exp() + b.exp());
        let ce = -sig(1.5, 2.0).ln();
        let q = [sig(1.75, 3.0), sig(3.0, 1.75)];
        let p = [sig(0.75, 1.0), sig(1.0, 0.75)];
        let kl = q[0] * (q[0] / p[0]).ln() + q[1] * (q[1] / p[1]).ln();
        assert!((loss - (ce + 0.5 * 4.0 * kl)).abs() < 1e-12);
    }
}
