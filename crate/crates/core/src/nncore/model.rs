use super::forward::FieldTokens;
use super::spec::ModelSpec;
use super::vocab::ModelVocab;
use super::weights::{init_weights, model_tensors, InitConfig, ModelWeights};
use crate::error::{Error, Result};

/// The full two-tower network `f(q, m) -> s` together with the token
/// vocabularies its embedding tables were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub weights: ModelWeights,
    pub vocab: ModelVocab,
}

impl Model {
    pub fn new(spec: ModelSpec, weights: ModelWeights, vocab: ModelVocab) -> Result<Self> {
        spec.validate()?;
        check_weights(&spec, &weights)?;
        Ok(Model {
            spec,
            weights,
            vocab,
        })
    }

    pub fn init(spec: ModelSpec, init: InitConfig) -> Result<Self> {
        spec.validate()?;
        let weights = init_weights(&spec, init);
        Ok(Model {
            spec,
            weights,
            vocab: ModelVocab::default(),
        })
    }

    /// Spec consistency, tensor shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_weights(&self.spec, &self.weights)
    }

    pub fn query_vector(&self, q: &FieldTokens) -> Result<Vec<f32>> {
        self.weights.query.forward(&self.spec.query_arm, q)
    }

    pub fn member_vector(&self, m: &FieldTokens) -> Result<Vec<f32>> {
        self.weights.member.forward(&self.spec.member_arm, m)
    }

    /// Monolithic score: both arms and the similarity layer in one call.
    pub fn score_pair(&self, q: &FieldTokens, m: &FieldTokens) -> Result<f32> {
        let qv = self.query_vector(q)?;
        let mv = self.member_vector(m)?;
        self.weights.cross.score(&self.spec.cross, &qv, &mv)
    }

    pub fn tensor_names(&self) -> Vec<String> {
        model_tensors(&self.spec, &self.weights)
            .into_iter()
            .map(|t| t.name)
            .collect()
    }
}

/// Shapes must match what the spec implies and every value must be finite.
pub(crate) fn check_weights(spec: &ModelSpec, w: &ModelWeights) -> Result<()> {
    let expected = ModelWeights::<f32>::zeros(spec);
    let want = model_tensors(spec, &expected);
    let have = model_tensors(spec, w);
    if want.len() != have.len() {
        return Err(Error::input(format!(
            "model has {} tensors, spec implies {}",
            have.len(),
            want.len()
        )));
    }
    for (a, b) in want.iter().zip(&have) {
        if a.shape != b.shape || a.data.len() != b.data.len() {
            return Err(Error::input(format!(
                "tensor {} has shape {:?}, spec implies {:?}",
                b.name, b.shape, a.shape
            )));
        }
        if b.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("tensor {} has non-finite values", b.name)));
        }
    }
    Ok(())
}
