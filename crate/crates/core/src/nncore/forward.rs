use std::collections::BTreeMap;

use super::spec::{Activation, ArmSpec, CrossKind, CrossSpec, Pooling};
use super::weights::{ArmWeights, CrossWeights, EmbeddingTable, Real};
use crate::error::{Error, Result};

/// Token ids per input field, keyed by `field_id`.
pub type FieldTokens = BTreeMap<u16, Vec<u32>>;

/// Sum or average `rows` into `out` (which must already be zeroed).
///
/// This is the only pooling routine in the crate; the online frontend pools
/// dictionary vectors through it as well, so split and monolithic paths add
/// rows in the same order and agree bit for bit.
pub fn pool_rows<'a, T: Real>(
    rows: impl IntoIterator<Item = &'a [T]>,
    mode: Pooling,
    out: &mut [T],
) -> usize {
    let mut n = 0usize;
    for row in rows {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
        n += 1;
    }
    if mode == Pooling::Mean && n > 0 {
        let denom = T::from_usize(n).unwrap();
        for o in out.iter_mut() {
            *o = *o / denom;
        }
    }
    n
}

pub fn embed_pool<T: Real>(
    tokens: &[u32],
    table: &EmbeddingTable<T>,
    mode: Pooling,
) -> Result<Vec<T>> {
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= table.vocab) {
        return Err(Error::input(format!(
            "token id {bad} out of range for vocabulary of {}",
            table.vocab
        )));
    }
    let mut out = vec![T::zero(); table.dim];
    pool_rows(tokens.iter().map(|&t| table.row(t as usize)), mode, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn activate<T: Real>(act: Activation, xs: &mut [T]) {
    match act {
        Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(T::zero())),
    }
}

/// Derivative expressed through the activation's output `y`.
#[inline]
pub(crate) fn activation_grad<T: Real>(act: Activation, y: T) -> T {
    match act {
        Activation::Tanh => T::one() - y * y,
        Activation::Relu => {
            if y > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Intermediate values of one arm evaluation, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct ArmTrace<T> {
    pub aggregate: Vec<T>,
    /// Post-activation output of every dense layer.
    pub outputs: Vec<Vec<T>>,
}

impl<T> ArmTrace<T> {
    pub fn output(&self) -> &[T] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Real> ArmWeights<T> {
    /// Pool every declared field and stack the results in field order.
    pub fn aggregate(&self, spec: &ArmSpec, inputs: &FieldTokens) -> Result<Vec<T>> {
        let mut agg = vec![T::zero(); spec.input_width()];
        let mut offset = 0;
        for (f, table) in spec.fields.iter().zip(&self.tables) {
            let tokens = inputs
                .get(&f.field_id)
                .ok_or_else(|| Error::input(format!("missing input for field {}", f.field_id)))?;
            if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= table.vocab) {
                return Err(Error::input(format!(
                    "token id {bad} out of range for field {} (vocab {})",
                    f.field_id, table.vocab
                )));
            }
            let slot = &mut agg[offset..offset + f.embed_dim];
            pool_rows(tokens.iter().map(|&t| table.row(t as usize)), f.pooling, slot);
            offset += f.embed_dim;
        }
        Ok(agg)
    }

    /// Run the dense stack on an already-aggregated input.
    pub fn dense_forward(&self, spec: &ArmSpec, aggregate: &[T]) -> Vec<T> {
        let mut x = aggregate.to_vec();
        let mut y = Vec::new();
        for layer in &self.layers {
            layer.apply(&x, &mut y);
            activate(spec.activation, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        x
    }

    pub fn forward(&self, spec: &ArmSpec, inputs: &FieldTokens) -> Result<Vec<T>> {
        let agg = self.aggregate(spec, inputs)?;
        Ok(self.dense_forward(spec, &agg))
    }

    pub(crate) fn forward_trace(&self, spec: &ArmSpec, inputs: &FieldTokens) -> Result<ArmTrace<T>> {
        let aggregate = self.aggregate(spec, inputs)?;
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().unwrap_or(&aggregate);
            let mut y = Vec::with_capacity(layer.out_dim);
            layer.apply(x, &mut y);
            activate(spec.activation, &mut y);
            outputs.push(y);
        }
        Ok(ArmTrace { aggregate, outputs })
    }
}

/// Cosine similarity with the zero-vector case defined as 0, clamped to [-1, 1].
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    c.max(-T::one()).min(T::one())
}

#[derive(Debug, Clone)]
pub(crate) struct CrossTrace<T> {
    pub input: Vec<T>,
    pub outputs: Vec<Vec<T>>,
}

impl<T: Real> CrossWeights<T> {
    fn check_dims(&self, spec: &CrossSpec, q: &[T], m: &[T]) -> Result<()> {
        let ok = match spec.kind {
            CrossKind::Cosine => q.len() == m.len(),
            CrossKind::DenseCross => self
                .layers
                .first()
                .is_some_and(|l| l.in_dim == q.len() + m.len()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!(
                "similarity input dimensions {} and {} do not fit the cross layer",
                q.len(),
                m.len()
            )))
        }
    }

    /// The similarity layer: cosine or a dense stack over `[q ; m]`.
    pub fn score(&self, spec: &CrossSpec, q: &[T], m: &[T]) -> Result<T> {
        self.check_dims(spec, q, m)?;
        Ok(match spec.kind {
            CrossKind::Cosine => cosine(q, m),
            CrossKind::DenseCross => self.dense_trace(spec, q, m).outputs.last().unwrap()[0],
        })
    }

    pub(crate) fn dense_trace(&self, spec: &CrossSpec, q: &[T], m: &[T]) -> CrossTrace<T> {
        let mut input = Vec::with_capacity(q.len() + m.len());
        input.extend_from_slice(q);
        input.extend_from_slice(m);
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let x = outputs.last().unwrap_or(&input);
            let mut y = Vec::with_capacity(layer.out_dim);
            layer.apply(x, &mut y);
            if i < last {
                activate(spec.activation, &mut y);
            }
            outputs.push(y);
        }
        CrossTrace { input, outputs }
    }
}

pub fn similarity<T: Real>(spec: &CrossSpec, weights: &CrossWeights<T>, q: &[T], m: &[T]) -> Result<T> {
    weights.score(spec, q, m)
}
