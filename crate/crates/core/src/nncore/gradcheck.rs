use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::FieldTokens;
use super::model::Model;
use super::spec::{Activation, CrossKind, ModelSpec};
use super::train::{example_grad, example_loss, ArmGrads, LossKind, ModelGrads, TrainExample};
use super::weights::{model_tensors_mut, ModelWeights};
use crate::error::{Error, Result};

/// Parameters sampled per check.
pub const GRAD_CHECK_SAMPLES: usize = 64;

/// Denominator floor for the relative error. Central differences in `f64`
/// at `epsilon = 1e-4` are accurate to roughly 1e-9 absolute, so gradients
/// below this floor are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

/// Compare backprop against central finite differences on a random sample
/// of parameters. Returns the largest relative error `|a - n| / max(|a|, |n|)`,
/// with `0/0` taken as 0.
pub fn grad_check(model: &Model, example: &TrainExample, epsilon: f64) -> Result<f64> {
    grad_check_with(model, example, epsilon, LossKind::Pairwise, 0)
}

pub fn grad_check_with(
    model: &Model,
    example: &TrainExample,
    epsilon: f64,
    loss: LossKind,
    seed: u64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::input(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let spec = &model.spec;
    let mut w = model.weights.cast::<f64>();
    let mut g = ModelGrads::<f64>::zeros(spec);
    example_grad(spec, &w, example, loss, &mut g)?;
    let analytic = flatten_grads(spec, &g);

    let mut candidates = candidate_params(spec, example, &mut w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let has_relu = uses_relu(spec);
    let base_pattern = if has_relu { relu_pattern(spec, &w, example)? } else { Vec::new() };

    let mut worst = 0f64;
    let mut checked = 0usize;
    for (t, i) in candidates {
        if checked == GRAD_CHECK_SAMPLES {
            break;
        }
        let orig = get(spec, &mut w, t, i);
        set(spec, &mut w, t, i, orig + epsilon);
        let plus = example_loss(spec, &w, example, loss)?;
        let plus_pattern = if has_relu { relu_pattern(spec, &w, example)? } else { Vec::new() };
        set(spec, &mut w, t, i, orig - epsilon);
        let minus = example_loss(spec, &w, example, loss)?;
        let minus_pattern = if has_relu { relu_pattern(spec, &w, example)? } else { Vec::new() };
        set(spec, &mut w, t, i, orig);

        // A relu switching state inside the stencil makes the loss
        // non-differentiable there; such parameters are skipped.
        if has_relu && (plus_pattern != base_pattern || minus_pattern != base_pattern) {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[t][i];
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        let diff = (a - numeric).abs();
        let rel = if diff == 0.0 { 0.0 } else { diff / denom };
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(worst)
}

fn uses_relu(spec: &ModelSpec) -> bool {
    spec.query_arm.activation == Activation::Relu
        || spec.member_arm.activation == Activation::Relu
        || (spec.cross.kind == CrossKind::DenseCross && spec.cross.activation == Activation::Relu)
}

/// On/off state of every relu unit touched by the example.
fn relu_pattern(spec: &ModelSpec, w: &ModelWeights<f64>, ex: &TrainExample) -> Result<Vec<bool>> {
    let mut pattern = Vec::new();
    let q = w.query.forward_trace(&spec.query_arm, &ex.query)?;
    let p = w.member.forward_trace(&spec.member_arm, &ex.positive)?;
    let n = w.member.forward_trace(&spec.member_arm, &ex.negative)?;
    if spec.query_arm.activation == Activation::Relu {
        pattern.extend(q.outputs.iter().flatten().map(|&v| v > 0.0));
    }
    if spec.member_arm.activation == Activation::Relu {
        pattern.extend(p.outputs.iter().flatten().map(|&v| v > 0.0));
        pattern.extend(n.outputs.iter().flatten().map(|&v| v > 0.0));
    }
    if spec.cross.kind == CrossKind::DenseCross && spec.cross.activation == Activation::Relu {
        for m in [&p, &n] {
            let t = w.cross.dense_trace(&spec.cross, q.output(), m.output());
            let hidden = t.outputs.len() - 1;
            pattern.extend(t.outputs[..hidden].iter().flatten().map(|&v| v > 0.0));
        }
    }
    Ok(pattern)
}

/// Every dense parameter plus the embedding entries of rows the example uses.
fn candidate_params(spec: &ModelSpec, ex: &TrainExample, w: &mut ModelWeights<f64>) -> Vec<(usize, usize)> {
    let used = |tokens: &[&FieldTokens], field: u16| -> Vec<u32> {
        let mut ids: Vec<u32> = tokens
            .iter()
            .filter_map(|t| t.get(&field))
            .flatten()
            .copied()
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for f in &spec.query_arm.fields {
        rows.push(used(&[&ex.query], f.field_id));
    }
    for f in &spec.member_arm.fields {
        rows.push(used(&[&ex.positive, &ex.negative], f.field_id));
    }

    let mut out = Vec::new();
    let mut table_idx = 0;
    for (t, tensor) in model_tensors_mut(spec, w).into_iter().enumerate() {
        if tensor.name.contains(".embed.") {
            let dim = tensor.shape[1];
            for &r in &rows[table_idx] {
                out.extend((0..dim).map(|k| (t, r as usize * dim + k)));
            }
            table_idx += 1;
        } else {
            out.extend((0..tensor.data.len()).map(|i| (t, i)));
        }
    }
    out
}

fn get(spec: &ModelSpec, w: &mut ModelWeights<f64>, t: usize, i: usize) -> f64 {
    model_tensors_mut(spec, w)[t].data[i]
}

fn set(spec: &ModelSpec, w: &mut ModelWeights<f64>, t: usize, i: usize, v: f64) {
    model_tensors_mut(spec, w)[t].data[i] = v;
}

/// Gradients laid out like `model_tensors`, embedding tables densified.
fn flatten_grads(spec: &ModelSpec, g: &ModelGrads<f64>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut arm = |arm_spec: &super::spec::ArmSpec, ag: &ArmGrads<f64>| {
        for (f, rows) in arm_spec.fields.iter().zip(&ag.tables) {
            let mut dense = vec![0.0; f.vocab_size * f.embed_dim];
            for (&id, row) in rows {
                let start = id as usize * f.embed_dim;
                dense[start..start + f.embed_dim].copy_from_slice(row);
            }
            out.push(dense);
        }
        for l in &ag.layers {
            out.push(l.weight.clone());
            out.push(l.bias.clone());
        }
    };
    arm(&spec.query_arm, &g.query);
    arm(&spec.member_arm, &g.member);
    for l in &g.cross {
        out.push(l.weight.clone());
        out.push(l.bias.clone());
    }
    out
}
