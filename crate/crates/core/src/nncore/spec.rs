use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

/// One categorical input field: a token list pooled into a single embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub field_id: u16,
    /// Zero in a spec template means "take it from the training vocabulary".
    #[serde(default)]
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub pooling: Pooling,
}

/// One tower: per-field pooled embeddings stacked in declared order, then a
/// dense stack with `activation` after every layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub fields: Vec<FieldSpec>,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl ArmSpec {
    pub fn input_width(&self) -> usize {
        self.fields.iter().map(|f| f.embed_dim).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(0)
    }

    pub fn field(&self, field_id: u16) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.field_id == field_id)
    }

    /// `(in, out)` for every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        dense_shapes(self.input_width(), &self.hidden_dims)
    }

    pub fn validate(&self, arm: &str) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config(format!("{arm} arm has no fields")));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config(format!("{arm} arm has no hidden layers")));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("{arm} arm has a zero-width layer")));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if f.vocab_size == 0 || f.embed_dim == 0 {
                return Err(Error::Config(format!(
                    "{arm} arm field {} needs vocab_size >= 1 and embed_dim >= 1",
                    f.field_id
                )));
            }
            if self.fields[..i].iter().any(|g| g.field_id == f.field_id) {
                return Err(Error::Config(format!(
                    "{arm} arm declares field {} twice",
                    f.field_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossKind {
    Cosine,
    DenseCross,
}

fn default_cross_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossSpec {
    pub kind: CrossKind,
    /// Dense-cross layer widths; the last must be 1. Ignored for cosine.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// Applied between dense-cross layers; the final layer is linear.
    #[serde(default = "default_cross_activation")]
    pub activation: Activation,
}

impl CrossSpec {
    pub fn cosine() -> Self {
        CrossSpec {
            kind: CrossKind::Cosine,
            hidden_dims: Vec::new(),
            activation: Activation::Tanh,
        }
    }

    pub fn layer_shapes(&self, query_dim: usize, member_dim: usize) -> Vec<(usize, usize)> {
        match self.kind {
            CrossKind::Cosine => Vec::new(),
            CrossKind::DenseCross => dense_shapes(query_dim + member_dim, &self.hidden_dims),
        }
    }

    pub fn validate(&self, query_dim: usize, member_dim: usize) -> Result<()> {
        match self.kind {
            CrossKind::Cosine if query_dim != member_dim => Err(Error::Config(format!(
                "cosine cross needs equal arm outputs, got {query_dim} and {member_dim}"
            ))),
            CrossKind::DenseCross if self.hidden_dims.last() != Some(&1) => Err(Error::Config(
                "dense cross must end in a width-1 layer".into(),
            )),
            CrossKind::DenseCross if self.hidden_dims.contains(&0) => {
                Err(Error::Config("dense cross has a zero-width layer".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub query_arm: ArmSpec,
    pub member_arm: ArmSpec,
    pub cross: CrossSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.query_arm.validate("query")?;
        self.member_arm.validate("member")?;
        self.cross
            .validate(self.query_arm.output_dim(), self.member_arm.output_dim())
    }

    /// Shallow query arm `[64]`, deeper member arm `[128, 64]`, cosine cross.
    pub fn default_for_fields(fields: &[(u16, usize)], embed_dim: usize) -> Self {
        let field_specs = |pooling| {
            fields
                .iter()
                .map(|&(field_id, vocab_size)| FieldSpec {
                    field_id,
                    vocab_size,
                    embed_dim,
                    pooling,
                })
                .collect::<Vec<_>>()
        };
        ModelSpec {
            query_arm: ArmSpec {
                fields: field_specs(Pooling::Mean),
                hidden_dims: vec![64],
                activation: Activation::Tanh,
            },
            member_arm: ArmSpec {
                fields: field_specs(Pooling::Mean),
                hidden_dims: vec![128, 64],
                activation: Activation::Tanh,
            },
            cross: CrossSpec::cosine(),
        }
    }
}

fn dense_shapes(input: usize, dims: &[usize]) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(dims.len());
    let mut prev = input;
    for &d in dims {
        shapes.push((prev, d));
        prev = d;
    }
    shapes
}
