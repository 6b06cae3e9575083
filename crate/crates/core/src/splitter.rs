//! Carves a trained model into three independently deployable bundles: the
//! query arm (online frontend), the member arm (offline indexer) and the
//! cross layer (searchers). All three carry the same version id.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::bundle::{fill_tensors, read_bundle, write_bundle, BundleSpec, Manifest, BUNDLE_FORMAT};
use crate::nncore::{
    arm_tensors, arm_tensors_mut, cross_tensors, cross_tensors_mut, ArmSpec, ArmWeights,
    CrossSpec, CrossWeights, FieldTokens, Model, TensorRef, Vocab,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version_id: u16,
    pub label: String,
}

impl ModelVersion {
    /// Version 0 is reserved for "no semantic vector".
    pub fn new(version_id: u16, label: impl Into<String>) -> Result<Self> {
        if version_id == 0 {
            return Err(Error::input("version id 0 is reserved"));
        }
        Ok(ModelVersion {
            version_id,
            label: label.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryArmBundle {
    pub version: ModelVersion,
    pub spec: ArmSpec,
    pub weights: ArmWeights,
    pub vocab: Vocab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberArmBundle {
    pub version: ModelVersion,
    pub spec: ArmSpec,
    pub weights: ArmWeights,
    pub vocab: Vocab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossBundle {
    pub version: ModelVersion,
    pub spec: CrossSpec,
    pub query_dim: usize,
    pub member_dim: usize,
    pub weights: CrossWeights,
}

impl QueryArmBundle {
    pub fn forward(&self, inputs: &FieldTokens) -> Result<Vec<f32>> {
        self.weights.forward(&self.spec, inputs)
    }
}

impl MemberArmBundle {
    pub fn forward(&self, inputs: &FieldTokens) -> Result<Vec<f32>> {
        self.weights.forward(&self.spec, inputs)
    }
}

impl CrossBundle {
    pub fn score(&self, q: &[f32], m: &[f32]) -> Result<f32> {
        if q.len() != self.query_dim || m.len() != self.member_dim {
            return Err(Error::input(format!(
                "cross layer expects ({}, {}) inputs, got ({}, {})",
                self.query_dim,
                self.member_dim,
                q.len(),
                m.len()
            )));
        }
        self.weights.score(&self.spec, q, m)
    }
}

/// Split a monolithic model; every tensor lands in exactly one bundle.
pub fn split(model: &Model, version: ModelVersion) -> Result<(QueryArmBundle, MemberArmBundle, CrossBundle)> {
    if version.version_id == 0 {
        return Err(Error::input("version id 0 is reserved"));
    }
    model.validate()?;
    let spec = &model.spec;
    Ok((
        QueryArmBundle {
            version: version.clone(),
            spec: spec.query_arm.clone(),
            weights: model.weights.query.clone(),
            vocab: model.vocab.query.clone(),
        },
        MemberArmBundle {
            version: version.clone(),
            spec: spec.member_arm.clone(),
            weights: model.weights.member.clone(),
            vocab: model.vocab.member.clone(),
        },
        CrossBundle {
            version,
            spec: spec.cross.clone(),
            query_dim: spec.query_arm.output_dim(),
            member_dim: spec.member_arm.output_dim(),
            weights: model.weights.cross.clone(),
        },
    ))
}

/// A deployable piece of a split model.
pub trait Bundle: Sized {
    fn version(&self) -> &ModelVersion;
    fn tensors(&self) -> Vec<TensorRef<'_, f32>>;
    fn body(&self) -> BundleSpec;
    fn from_manifest(ctx: &str, manifest: Manifest, data: Vec<Vec<f32>>) -> Result<Self>;
}

impl Bundle for QueryArmBundle {
    fn version(&self) -> &ModelVersion {
        &self.version
    }

    fn tensors(&self) -> Vec<TensorRef<'_, f32>> {
        arm_tensors("query", &self.spec, &self.weights)
    }

    fn body(&self) -> BundleSpec {
        BundleSpec::QueryArm {
            spec: self.spec.clone(),
            vocab: self.vocab.clone(),
        }
    }

    fn from_manifest(ctx: &str, manifest: Manifest, data: Vec<Vec<f32>>) -> Result<Self> {
        let version = manifest_version(ctx, &manifest)?;
        let BundleSpec::QueryArm { spec, vocab } = manifest.body else {
            return Err(wrong_kind(ctx, "query_arm", &manifest.body));
        };
        spec.validate("query").map_err(|e| Error::format(ctx, e.to_string()))?;
        let mut weights = ArmWeights::zeros(&spec);
        fill_tensors(ctx, &manifest.tensors, data, arm_tensors_mut("query", &spec, &mut weights))?;
        Ok(QueryArmBundle { version, spec, weights, vocab })
    }
}

impl Bundle for MemberArmBundle {
    fn version(&self) -> &ModelVersion {
        &self.version
    }

    fn tensors(&self) -> Vec<TensorRef<'_, f32>> {
        arm_tensors("member", &self.spec, &self.weights)
    }

    fn body(&self) -> BundleSpec {
        BundleSpec::MemberArm {
            spec: self.spec.clone(),
            vocab: self.vocab.clone(),
        }
    }

    fn from_manifest(ctx: &str, manifest: Manifest, data: Vec<Vec<f32>>) -> Result<Self> {
        let version = manifest_version(ctx, &manifest)?;
        let BundleSpec::MemberArm { spec, vocab } = manifest.body else {
            return Err(wrong_kind(ctx, "member_arm", &manifest.body));
        };
        spec.validate("member").map_err(|e| Error::format(ctx, e.to_string()))?;
        let mut weights = ArmWeights::zeros(&spec);
        fill_tensors(ctx, &manifest.tensors, data, arm_tensors_mut("member", &spec, &mut weights))?;
        Ok(MemberArmBundle { version, spec, weights, vocab })
    }
}

impl Bundle for CrossBundle {
    fn version(&self) -> &ModelVersion {
        &self.version
    }

    fn tensors(&self) -> Vec<TensorRef<'_, f32>> {
        cross_tensors(&self.weights)
    }

    fn body(&self) -> BundleSpec {
        BundleSpec::Cross {
            spec: self.spec.clone(),
            query_dim: self.query_dim,
            member_dim: self.member_dim,
        }
    }

    fn from_manifest(ctx: &str, manifest: Manifest, data: Vec<Vec<f32>>) -> Result<Self> {
        let version = manifest_version(ctx, &manifest)?;
        let BundleSpec::Cross { spec, query_dim, member_dim } = manifest.body else {
            return Err(wrong_kind(ctx, "cross", &manifest.body));
        };
        spec.validate(query_dim, member_dim)
            .map_err(|e| Error::format(ctx, e.to_string()))?;
        let mut weights = CrossWeights::zeros(&spec, query_dim, member_dim);
        fill_tensors(ctx, &manifest.tensors, data, cross_tensors_mut(&mut weights))?;
        Ok(CrossBundle { version, spec, query_dim, member_dim, weights })
    }
}

fn manifest_version(ctx: &str, m: &Manifest) -> Result<ModelVersion> {
    if m.version_id == 0 {
        return Err(Error::format(ctx, "manifest version_id 0 is reserved"));
    }
    Ok(ModelVersion {
        version_id: m.version_id,
        label: m.label.clone(),
    })
}

fn wrong_kind(ctx: &str, want: &str, got: &BundleSpec) -> Error {
    Error::format(ctx, format!("expected a {want} bundle, found {}", got.kind()))
}

pub fn save_bundle<B: Bundle>(bundle: &B, dir: &Path) -> Result<()> {
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        body: bundle.body(),
        label: bundle.version().label.clone(),
        version_id: bundle.version().version_id,
        tensors: Vec::new(),
    };
    write_bundle(dir, manifest, &bundle.tensors())
}

pub fn load_bundle<B: Bundle>(dir: &Path) -> Result<B> {
    let (manifest, data) = read_bundle(dir)?;
    B::from_manifest(&dir.display().to_string(), manifest, data)
}

/// Save all three bundles under `dir/{query,member,cross}`.
pub fn save_split(
    dir: &Path,
    query: &QueryArmBundle,
    member: &MemberArmBundle,
    cross: &CrossBundle,
) -> Result<()> {
    save_bundle(query, &dir.join("query"))?;
    save_bundle(member, &dir.join("member"))?;
    save_bundle(cross, &dir.join("cross"))
}
