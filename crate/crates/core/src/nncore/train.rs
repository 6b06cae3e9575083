use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{activation_grad, ArmTrace, CrossTrace, FieldTokens};
use super::model::Model;
use super::spec::{ArmSpec, CrossKind, CrossSpec, ModelSpec};
use super::weights::{ArmWeights, CrossWeights, Dense, ModelWeights, Real};
use crate::error::{Error, Result};

/// One query-log judgment: the query preferred `positive` over `negative`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query: FieldTokens,
    pub positive: FieldTokens,
    pub negative: FieldTokens,
    pub positive_uid: u64,
    pub negative_uid: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `log(1 + exp(-(s+ - s-)))`
    #[default]
    Pairwise,
    /// Sigmoid cross-entropy with `s+` labelled 1 and `s-` labelled 0.
    Pointwise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub seed: u64,
    /// Reported per epoch as the fraction of examples with `s+ - s- > margin`.
    pub margin: f32,
    pub batch_size: usize,
    #[serde(default)]
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            epochs: 20,
            seed: 7,
            margin: 0.1,
            batch_size: 16,
            loss: LossKind::Pairwise,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the epoch, measured before each batch's update.
    pub epoch_loss: Vec<f64>,
    pub epoch_margin_fraction: Vec<f64>,
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Loss and its derivatives with respect to `(s+, s-)`.
pub(crate) fn loss_terms<T: Real>(kind: LossKind, pos: T, neg: T) -> (T, T, T) {
    match kind {
        LossKind::Pairwise => {
            let delta = pos - neg;
            let d = -sigmoid(-delta);
            (softplus(-delta), d, -d)
        }
        LossKind::Pointwise => (
            softplus(-pos) + softplus(neg),
            -sigmoid(-pos),
            sigmoid(neg),
        ),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ArmGrads<T> {
    pub tables: Vec<BTreeMap<u32, Vec<T>>>,
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> ArmGrads<T> {
    fn zeros(spec: &ArmSpec) -> Self {
        ArmGrads {
            tables: vec![BTreeMap::new(); spec.fields.len()],
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ModelGrads<T> {
    pub query: ArmGrads<T>,
    pub member: ArmGrads<T>,
    pub cross: Vec<Dense<T>>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ModelGrads {
            query: ArmGrads::zeros(&spec.query_arm),
            member: ArmGrads::zeros(&spec.member_arm),
            cross: CrossWeights::<T>::zeros(
                &spec.cross,
                spec.query_arm.output_dim(),
                spec.member_arm.output_dim(),
            )
            .layers,
        }
    }
}

/// Backprop `d_out` (gradient w.r.t. the arm output) down to the embedding rows.
fn arm_backward<T: Real>(
    spec: &ArmSpec,
    w: &ArmWeights<T>,
    inputs: &FieldTokens,
    trace: &ArmTrace<T>,
    d_out: Vec<T>,
    g: &mut ArmGrads<T>,
) {
    let mut delta = d_out;
    for l in (0..w.layers.len()).rev() {
        let layer = &w.layers[l];
        let y = &trace.outputs[l];
        for (d, &yi) in delta.iter_mut().zip(y) {
            *d = *d * activation_grad(spec.activation, yi);
        }
        let x = if l == 0 { &trace.aggregate } else { &trace.outputs[l - 1] };
        let gl = &mut g.layers[l];
        let mut next = vec![T::zero(); layer.in_dim];
        for (i, &d) in delta.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            gl.bias[i] += d;
            let wrow = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
            let grow = &mut gl.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
            for j in 0..layer.in_dim {
                grow[j] += d * x[j];
                next[j] += wrow[j] * d;
            }
        }
        delta = next;
    }
    let mut offset = 0;
    for (fi, f) in spec.fields.iter().enumerate() {
        let d_pool = &delta[offset..offset + f.embed_dim];
        offset += f.embed_dim;
        let tokens = &inputs[&f.field_id];
        if tokens.is_empty() {
            continue;
        }
        let share = match f.pooling {
            super::spec::Pooling::Mean => T::one() / T::from_usize(tokens.len()).unwrap(),
            super::spec::Pooling::Sum => T::one(),
        };
        for &t in tokens {
            let row = g.tables[fi]
                .entry(t)
                .or_insert_with(|| vec![T::zero(); f.embed_dim]);
            for (r, &d) in row.iter_mut().zip(d_pool) {
                *r += d * share;
            }
        }
    }
}

enum CrossEval<T> {
    Cosine(T),
    Dense(CrossTrace<T>),
}

impl<T: Real> CrossEval<T> {
    fn score(&self) -> T {
        match self {
            CrossEval::Cosine(s) => *s,
            CrossEval::Dense(t) => t.outputs.last().unwrap()[0],
        }
    }
}

fn cross_forward<T: Real>(spec: &CrossSpec, w: &CrossWeights<T>, q: &[T], m: &[T]) -> CrossEval<T> {
    match spec.kind {
        CrossKind::Cosine => CrossEval::Cosine(super::forward::cosine(q, m)),
        CrossKind::DenseCross => CrossEval::Dense(w.dense_trace(spec, q, m)),
    }
}

/// Gradient of `upstream * s(q, m)` w.r.t. `q` and `m`; dense-cross weight
/// gradients are accumulated into `g`.
fn cross_backward<T: Real>(
    spec: &CrossSpec,
    w: &CrossWeights<T>,
    q: &[T],
    m: &[T],
    eval: &CrossEval<T>,
    upstream: T,
    g: &mut [Dense<T>],
) -> (Vec<T>, Vec<T>) {
    match eval {
        CrossEval::Cosine(c) => {
            let nq2: T = q.iter().fold(T::zero(), |a, &x| a + x * x);
            let nm2: T = m.iter().fold(T::zero(), |a, &x| a + x * x);
            if nq2 == T::zero() || nm2 == T::zero() {
                return (vec![T::zero(); q.len()], vec![T::zero(); m.len()]);
            }
            let inv = T::one() / (nq2.sqrt() * nm2.sqrt());
            let dq = q
                .iter()
                .zip(m)
                .map(|(&qi, &mi)| upstream * (mi * inv - *c * qi / nq2))
                .collect();
            let dm = q
                .iter()
                .zip(m)
                .map(|(&qi, &mi)| upstream * (qi * inv - *c * mi / nm2))
                .collect();
            (dq, dm)
        }
        CrossEval::Dense(trace) => {
            let mut delta = vec![upstream];
            let last = w.layers.len() - 1;
            for l in (0..w.layers.len()).rev() {
                let layer = &w.layers[l];
                if l < last {
                    for (d, &yi) in delta.iter_mut().zip(&trace.outputs[l]) {
                        *d = *d * activation_grad(spec.activation, yi);
                    }
                }
                let x = if l == 0 { &trace.input } else { &trace.outputs[l - 1] };
                let gl = &mut g[l];
                let mut next = vec![T::zero(); layer.in_dim];
                for (i, &d) in delta.iter().enumerate() {
                    gl.bias[i] += d;
                    let base = i * layer.in_dim;
                    for j in 0..layer.in_dim {
                        gl.weight[base + j] += d * x[j];
                        next[j] += layer.weight[base + j] * d;
                    }
                }
                delta = next;
            }
            let dm = delta.split_off(q.len());
            (delta, dm)
        }
    }
}

/// Forward and backward for one triple; gradients are added into `g` and the
/// loss and the two scores are returned.
pub(crate) fn example_grad<T: Real>(
    spec: &ModelSpec,
    w: &ModelWeights<T>,
    ex: &TrainExample,
    kind: LossKind,
    g: &mut ModelGrads<T>,
) -> Result<(T, T, T)> {
    let qt = w.query.forward_trace(&spec.query_arm, &ex.query)?;
    let pt = w.member.forward_trace(&spec.member_arm, &ex.positive)?;
    let nt = w.member.forward_trace(&spec.member_arm, &ex.negative)?;
    let pe = cross_forward(&spec.cross, &w.cross, qt.output(), pt.output());
    let ne = cross_forward(&spec.cross, &w.cross, qt.output(), nt.output());
    let (sp, sn) = (pe.score(), ne.score());
    let (loss, dp, dn) = loss_terms(kind, sp, sn);

    let (dq_p, dm_p) = cross_backward(&spec.cross, &w.cross, qt.output(), pt.output(), &pe, dp, &mut g.cross);
    let (dq_n, dm_n) = cross_backward(&spec.cross, &w.cross, qt.output(), nt.output(), &ne, dn, &mut g.cross);
    let dq: Vec<T> = dq_p.iter().zip(&dq_n).map(|(&a, &b)| a + b).collect();

    arm_backward(&spec.query_arm, &w.query, &ex.query, &qt, dq, &mut g.query);
    arm_backward(&spec.member_arm, &w.member, &ex.positive, &pt, dm_p, &mut g.member);
    arm_backward(&spec.member_arm, &w.member, &ex.negative, &nt, dm_n, &mut g.member);
    Ok((loss, sp, sn))
}

/// Loss of one triple without gradients.
pub(crate) fn example_loss<T: Real>(
    spec: &ModelSpec,
    w: &ModelWeights<T>,
    ex: &TrainExample,
    kind: LossKind,
) -> Result<T> {
    let q = w.query.forward(&spec.query_arm, &ex.query)?;
    let p = w.member.forward(&spec.member_arm, &ex.positive)?;
    let n = w.member.forward(&spec.member_arm, &ex.negative)?;
    let sp = w.cross.score(&spec.cross, &q, &p)?;
    let sn = w.cross.score(&spec.cross, &q, &n)?;
    Ok(loss_terms(kind, sp, sn).0)
}

fn apply_arm(w: &mut ArmWeights<f32>, g: &ArmGrads<f32>, step: f32) {
    for (table, rows) in w.tables.iter_mut().zip(&g.tables) {
        for (&id, grad) in rows {
            for (v, &d) in table.row_mut(id as usize).iter_mut().zip(grad) {
                *v -= step * d;
            }
        }
    }
    apply_dense(&mut w.layers, &g.layers, step);
}

fn apply_dense(layers: &mut [Dense<f32>], grads: &[Dense<f32>], step: f32) {
    for (l, gl) in layers.iter_mut().zip(grads) {
        for (v, &d) in l.weight.iter_mut().zip(&gl.weight) {
            *v -= step * d;
        }
        for (v, &d) in l.bias.iter_mut().zip(&gl.bias) {
            *v -= step * d;
        }
    }
}

/// Mini-batch gradient descent on the configured loss. Examples are shuffled
/// every epoch from a generator seeded with `cfg.seed`, so a fixed seed gives
/// bit-identical weights.
pub fn train(model: &Model, data: &[TrainExample], cfg: &TrainConfig) -> Result<(ModelWeights, TrainReport)> {
    if data.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if !(cfg.lr >= 0.0) || cfg.batch_size == 0 {
        return Err(Error::input("learning rate must be >= 0 and batch size >= 1"));
    }
    for ex in data {
        if ex.positive_uid == ex.negative_uid {
            return Err(Error::input(format!(
                "example uses member {} as both positive and negative",
                ex.positive_uid
            )));
        }
    }
    let spec = &model.spec;
    let mut w = model.weights.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0f64;
        let mut above = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = ModelGrads::<f32>::zeros(spec);
            for &i in batch {
                let (loss, sp, sn) = example_grad(spec, &w, &data[i], cfg.loss, &mut g)?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        loss: loss as f64,
                    });
                }
                total += loss as f64;
                if sp - sn > cfg.margin {
                    above += 1;
                }
            }
            let step = cfg.lr / batch.len() as f32;
            if step > 0.0 {
                apply_arm(&mut w.query, &g.query, step);
                apply_arm(&mut w.member, &g.member, step);
                apply_dense(&mut w.cross.layers, &g.cross, step);
            }
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        report.epoch_loss.push(mean);
        report.epoch_margin_fraction.push(above as f64 / data.len() as f64);
    }
    Ok((w, report))
}

/// Fraction of triples the model orders correctly (`s+ > s-`).
pub fn pairwise_accuracy(model: &Model, data: &[TrainExample]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in data {
        let q = model.query_vector(&ex.query)?;
        let p = model.member_vector(&ex.positive)?;
        let n = model.member_vector(&ex.negative)?;
        let sp = model.weights.cross.score(&model.spec.cross, &q, &p)?;
        let sn = model.weights.cross.score(&model.spec.cross, &q, &n)?;
        if sp > sn {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean loss over `data` in `f64`.
pub fn mean_loss(model: &Model, data: &[TrainExample], kind: LossKind) -> Result<f64> {
    let w = model.weights.cast::<f64>();
    let mut total = 0f64;
    for ex in data {
        total += example_loss(&model.spec, &w, ex, kind)?;
    }
    Ok(total / data.len().max(1) as f64)
}
