use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{ArmSpec, CrossSpec, ModelSpec};

/// Scalar type the network can be evaluated in. Weights are stored as `f32`;
/// `f64` instantiations exist for finite-difference checks.
pub trait Real: Float + FromPrimitive + AddAssign + Debug + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn cast<A: ToPrimitive, B: FromPrimitive>(a: A) -> B {
    B::from_f64(a.to_f64().expect("finite scalar")).expect("representable scalar")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T = f32> {
    pub vocab: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        EmbeddingTable {
            vocab,
            dim,
            data: vec![T::zero(); vocab * dim],
        }
    }

    #[inline]
    pub fn row(&self, id: usize) -> &[T] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, id: usize) -> &mut [T] {
        &mut self.data[id * self.dim..(id + 1) * self.dim]
    }
}

/// Fully connected layer, `weight` is `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// `out = W x + b`, accumulating each output in `T`.
    pub fn apply(&self, x: &[T], out: &mut Vec<T>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for (row, &b) in self.weight.chunks_exact(self.in_dim).zip(&self.bias) {
            let mut acc = b;
            for (&w, &xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmWeights<T = f32> {
    pub tables: Vec<EmbeddingTable<T>>,
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> ArmWeights<T> {
    pub fn zeros(spec: &ArmSpec) -> Self {
        ArmWeights {
            tables: spec
                .fields
                .iter()
                .map(|f| EmbeddingTable::zeros(f.vocab_size, f.embed_dim))
                .collect(),
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ArmWeights<U> {
        ArmWeights {
            tables: self
                .tables
                .iter()
                .map(|t| EmbeddingTable {
                    vocab: t.vocab,
                    dim: t.dim,
                    data: t.data.iter().map(|&v| cast(v)).collect(),
                })
                .collect(),
            layers: self.layers.iter().map(cast_dense).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossWeights<T = f32> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> CrossWeights<T> {
    pub fn zeros(spec: &CrossSpec, query_dim: usize, member_dim: usize) -> Self {
        CrossWeights {
            layers: spec
                .layer_shapes(query_dim, member_dim)
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> CrossWeights<U> {
        CrossWeights {
            layers: self.layers.iter().map(cast_dense).collect(),
        }
    }
}

fn cast_dense<T: Real, U: Real>(d: &Dense<T>) -> Dense<U> {
    Dense {
        in_dim: d.in_dim,
        out_dim: d.out_dim,
        weight: d.weight.iter().map(|&v| cast(v)).collect(),
        bias: d.bias.iter().map(|&v| cast(v)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub query: ArmWeights<T>,
    pub member: ArmWeights<T>,
    pub cross: CrossWeights<T>,
}

impl<T: Real> ModelWeights<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ModelWeights {
            query: ArmWeights::zeros(&spec.query_arm),
            member: ArmWeights::zeros(&spec.member_arm),
            cross: CrossWeights::zeros(
                &spec.cross,
                spec.query_arm.output_dim(),
                spec.member_arm.output_dim(),
            ),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            query: self.query.cast(),
            member: self.member.cast(),
            cross: self.cross.cast(),
        }
    }
}

/// Named view of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T = f32> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct TensorMut<'a, T = f32> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

pub(crate) fn arm_tensors<'a, T>(
    prefix: &str,
    spec: &ArmSpec,
    w: &'a ArmWeights<T>,
) -> Vec<TensorRef<'a, T>> {
    let mut out = Vec::new();
    for (f, t) in spec.fields.iter().zip(&w.tables) {
        out.push(TensorRef {
            name: format!("{prefix}.embed.{}", f.field_id),
            shape: vec![t.vocab, t.dim],
            data: &t.data,
        });
    }
    dense_tensors(prefix, &w.layers, &mut out);
    out
}

pub(crate) fn arm_tensors_mut<'a, T>(
    prefix: &str,
    spec: &ArmSpec,
    w: &'a mut ArmWeights<T>,
) -> Vec<TensorMut<'a, T>> {
    let mut out = Vec::new();
    for (f, t) in spec.fields.iter().zip(w.tables.iter_mut()) {
        out.push(TensorMut {
            name: format!("{prefix}.embed.{}", f.field_id),
            shape: vec![t.vocab, t.dim],
            data: &mut t.data,
        });
    }
    for (i, d) in w.layers.iter_mut().enumerate() {
        out.push(TensorMut {
            name: format!("{prefix}.dense.{i}.weight"),
            shape: vec![d.out_dim, d.in_dim],
            data: &mut d.weight,
        });
        out.push(TensorMut {
            name: format!("{prefix}.dense.{i}.bias"),
            shape: vec![d.out_dim],
            data: &mut d.bias,
        });
    }
    out
}

pub(crate) fn cross_tensors<'a, T>(w: &'a CrossWeights<T>) -> Vec<TensorRef<'a, T>> {
    let mut out = Vec::new();
    dense_tensors("cross", &w.layers, &mut out);
    out
}

pub(crate) fn cross_tensors_mut<'a, T>(w: &'a mut CrossWeights<T>) -> Vec<TensorMut<'a, T>> {
    let mut out = Vec::new();
    for (i, d) in w.layers.iter_mut().enumerate() {
        out.push(TensorMut {
            name: format!("cross.dense.{i}.weight"),
            shape: vec![d.out_dim, d.in_dim],
            data: &mut d.weight,
        });
        out.push(TensorMut {
            name: format!("cross.dense.{i}.bias"),
            shape: vec![d.out_dim],
            data: &mut d.bias,
        });
    }
    out
}

fn dense_tensors<'a, T>(prefix: &str, layers: &'a [Dense<T>], out: &mut Vec<TensorRef<'a, T>>) {
    for (i, d) in layers.iter().enumerate() {
        out.push(TensorRef {
            name: format!("{prefix}.dense.{i}.weight"),
            shape: vec![d.out_dim, d.in_dim],
            data: &d.weight,
        });
        out.push(TensorRef {
            name: format!("{prefix}.dense.{i}.bias"),
            shape: vec![d.out_dim],
            data: &d.bias,
        });
    }
}

/// Every tensor of the model in declared order: query arm, member arm, cross.
pub fn model_tensors<'a, T>(spec: &ModelSpec, w: &'a ModelWeights<T>) -> Vec<TensorRef<'a, T>> {
    let mut out = arm_tensors("query", &spec.query_arm, &w.query);
    out.extend(arm_tensors("member", &spec.member_arm, &w.member));
    out.extend(cross_tensors(&w.cross));
    out
}

pub fn model_tensors_mut<'a, T>(
    spec: &ModelSpec,
    w: &'a mut ModelWeights<T>,
) -> Vec<TensorMut<'a, T>> {
    let mut out = arm_tensors_mut("query", &spec.query_arm, &mut w.query);
    out.extend(arm_tensors_mut("member", &spec.member_arm, &mut w.member));
    out.extend(cross_tensors_mut(&mut w.cross));
    out
}

/// Initialization draws weights from `uniform(-range, range)` in tensor order
/// from a single seeded stream; biases start at zero.
#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub seed: u64,
    pub range: f32,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            seed: 0,
            range: 0.05,
        }
    }
}

pub fn init_weights(spec: &ModelSpec, init: InitConfig) -> ModelWeights<f32> {
    let mut w = ModelWeights::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    for t in model_tensors_mut(spec, &mut w) {
        if t.name.ends_with(".bias") {
            continue;
        }
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-init.range..init.range);
        }
    }
    w
}
