#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitrank::nncore::{
    Activation, ArmSpec, CrossKind, CrossSpec, FieldSpec, FieldTokens, InitConfig, Model,
    ModelSpec, Pooling, TrainExample,
};

pub fn small_spec(act: Activation, cross: CrossKind) -> ModelSpec {
    let fields = |pooling| {
        vec![
            FieldSpec { field_id: 0, vocab_size: 30, embed_dim: 6, pooling },
            FieldSpec { field_id: 1, vocab_size: 12, embed_dim: 4, pooling: Pooling::Sum },
            FieldSpec { field_id: 2, vocab_size: 9, embed_dim: 5, pooling },
        ]
    };
    ModelSpec {
        query_arm: ArmSpec { fields: fields(Pooling::Mean), hidden_dims: vec![8], activation: act },
        member_arm: ArmSpec { fields: fields(Pooling::Mean), hidden_dims: vec![10, 8], activation: act },
        cross: match cross {
            CrossKind::Cosine => CrossSpec::cosine(),
            CrossKind::DenseCross => CrossSpec {
                kind: CrossKind::DenseCross,
                hidden_dims: vec![6, 1],
                activation: act,
            },
        },
    }
}

/// A model with weights large enough that activations are not all near zero.
pub fn random_model(seed: u64, act: Activation, cross: CrossKind) -> Model {
    let mut m = Model::init(small_spec(act, cross), InitConfig { seed, range: 0.5 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in m
        .weights
        .query
        .layers
        .iter_mut()
        .chain(m.weights.member.layers.iter_mut())
        .chain(m.weights.cross.layers.iter_mut())
    {
        for b in &mut l.bias {
            *b = rng.gen_range(-0.2..0.2);
        }
    }
    m
}

pub fn random_tokens(rng: &mut ChaCha8Rng, arm: &ArmSpec) -> FieldTokens {
    arm.fields
        .iter()
        .map(|f| {
            let n = rng.gen_range(0..5);
            (f.field_id, (0..n).map(|_| rng.gen_range(0..f.vocab_size as u32)).collect())
        })
        .collect()
}

pub fn random_example(rng: &mut ChaCha8Rng, spec: &ModelSpec) -> TrainExample {
    let nonempty = |arm: &ArmSpec, rng: &mut ChaCha8Rng| loop {
        let t = random_tokens(rng, arm);
        if t.values().any(|v| !v.is_empty()) {
            return t;
        }
    };
    TrainExample {
        query: nonempty(&spec.query_arm, rng),
        positive: nonempty(&spec.member_arm, rng),
        negative: nonempty(&spec.member_arm, rng),
        positive_uid: 1,
        negative_uid: 2,
    }
}

/// Forward pass written out with explicit loops and f64 accumulation,
/// independent of the library's pooling and dense kernels.
pub fn oracle_arm(model: &Model, query_side: bool, inputs: &FieldTokens) -> Vec<f64> {
    let (spec, w) = if query_side {
        (&model.spec.query_arm, &model.weights.query)
    } else {
        (&model.spec.member_arm, &model.weights.member)
    };
    let mut x: Vec<f64> = Vec::new();
    for (fi, f) in spec.fields.iter().enumerate() {
        let toks = &inputs[&f.field_id];
        let table = &w.tables[fi];
        for k in 0..f.embed_dim {
            let mut s = 0f64;
            for &t in toks {
                s += table.data[t as usize * f.embed_dim + k] as f64;
            }
            if f.pooling == Pooling::Mean && !toks.is_empty() {
                s /= toks.len() as f64;
            }
            x.push(s);
        }
    }
    for layer in &w.layers {
        let mut y = vec![0f64; layer.out_dim];
        for i in 0..layer.out_dim {
            let mut acc = layer.bias[i] as f64;
            for j in 0..layer.in_dim {
                acc += layer.weight[i * layer.in_dim + j] as f64 * x[j];
            }
            y[i] = match spec.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Relu => acc.max(0.0),
            };
        }
        x = y;
    }
    x
}

pub fn oracle_cross(model: &Model, q: &[f64], m: &[f64]) -> f64 {
    match model.spec.cross.kind {
        CrossKind::Cosine => {
            let dot: f64 = q.iter().zip(m).map(|(a, b)| a * b).sum();
            let nq: f64 = q.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nm: f64 = m.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nq == 0.0 || nm == 0.0 { 0.0 } else { dot / (nq * nm) }
        }
        CrossKind::DenseCross => {
            let mut x: Vec<f64> = q.iter().chain(m).copied().collect();
            let layers = &model.weights.cross.layers;
            for (l, layer) in layers.iter().enumerate() {
                let mut y = vec![0f64; layer.out_dim];
                for i in 0..layer.out_dim {
                    let mut acc = layer.bias[i] as f64;
                    for j in 0..layer.in_dim {
                        acc += layer.weight[i * layer.in_dim + j] as f64 * x[j];
                    }
                    y[i] = if l + 1 == layers.len() {
                        acc
                    } else {
                        match model.spec.cross.activation {
                            Activation::Tanh => acc.tanh(),
                            Activation::Relu => acc.max(0.0),
                        }
                    };
                }
                x = y;
            }
            x[0]
        }
    }
}

pub fn oracle_score(model: &Model, q: &FieldTokens, m: &FieldTokens) -> f64 {
    oracle_cross(model, &oracle_arm(model, true, q), &oracle_arm(model, false, m))
}
