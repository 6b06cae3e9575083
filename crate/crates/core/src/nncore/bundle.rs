//! On-disk bundle: a directory with `manifest.json` (spec, version, tensor
//! order and shapes) and `weights.bin` (every tensor concatenated in manifest
//! order as little-endian `f32`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{check_weights, Model};
use super::spec::{ArmSpec, CrossSpec, ModelSpec};
use super::vocab::{ModelVocab, Vocab};
use super::weights::{model_tensors, model_tensors_mut, ModelWeights, TensorMut, TensorRef};
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT: &str = "splitrank-bundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BundleSpec {
    Model {
        spec: ModelSpec,
        vocab: ModelVocab,
    },
    QueryArm {
        spec: ArmSpec,
        vocab: Vocab,
    },
    MemberArm {
        spec: ArmSpec,
        vocab: Vocab,
    },
    Cross {
        spec: CrossSpec,
        query_dim: usize,
        member_dim: usize,
    },
}

impl BundleSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BundleSpec::Model { .. } => "model",
            BundleSpec::QueryArm { .. } => "query_arm",
            BundleSpec::MemberArm { .. } => "member_arm",
            BundleSpec::Cross { .. } => "cross",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    #[serde(flatten)]
    pub body: BundleSpec,
    /// Free-form version string.
    pub label: String,
    /// Deployment version; 0 for an unsplit model, > 0 for split bundles.
    #[serde(default)]
    pub version_id: u16,
    pub tensors: Vec<TensorInfo>,
}

pub fn write_bundle(dir: &Path, mut manifest: Manifest, tensors: &[TensorRef<'_, f32>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    manifest.format = BUNDLE_FORMAT.to_string();
    manifest.tensors = tensors
        .iter()
        .map(|t| TensorInfo {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    let total: usize = tensors.iter().map(|t| t.data.len()).sum();
    let mut bytes = Vec::with_capacity(total * 4);
    for t in tensors {
        for v in t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    Ok(())
}

/// Raw bundle contents: the manifest and one `Vec<f32>` per listed tensor.
pub fn read_bundle(dir: &Path) -> Result<(Manifest, Vec<Vec<f32>>)> {
    let ctx = dir.display().to_string();
    let raw = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::format(format!("{ctx}/{MANIFEST_FILE}"), e.to_string()))?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(Error::format(
            &ctx,
            format!("unsupported bundle format {:?}", manifest.format),
        ));
    }
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    let mut offset = 0usize;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for info in &manifest.tensors {
        let end = info
            .shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .and_then(|len| offset.checked_add(len))
            .unwrap_or(usize::MAX);
        if end > bytes.len() {
            return Err(Error::format(
                format!("{ctx}/{WEIGHTS_FILE}"),
                format!("truncated inside tensor {}", info.name),
            ));
        }
        tensors.push(
            bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::format(
            format!("{ctx}/{WEIGHTS_FILE}"),
            format!("{} trailing bytes after the last tensor", bytes.len() - offset),
        ));
    }
    Ok((manifest, tensors))
}

/// Copy loaded tensors into `targets`, requiring identical names and shapes in
/// the same order. Errors name the offending tensor.
pub(crate) fn fill_tensors(
    ctx: &str,
    manifest: &[TensorInfo],
    data: Vec<Vec<f32>>,
    targets: Vec<TensorMut<'_, f32>>,
) -> Result<()> {
    if manifest.len() != targets.len() {
        let missing = targets
            .iter()
            .find(|t| !manifest.iter().any(|m| m.name == t.name))
            .map(|t| t.name.clone())
            .or_else(|| {
                manifest
                    .iter()
                    .find(|m| !targets.iter().any(|t| t.name == m.name))
                    .map(|m| m.name.clone())
            })
            .unwrap_or_default();
        return Err(Error::format(
            ctx,
            format!(
                "manifest lists {} tensors, spec implies {} (first mismatch: {missing})",
                manifest.len(),
                targets.len()
            ),
        ));
    }
    for ((info, values), target) in manifest.iter().zip(data).zip(targets) {
        if info.name != target.name || info.shape != target.shape {
            return Err(Error::format(
                ctx,
                format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    info.name, info.shape, target.name, target.shape
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(ctx, format!("tensor {} has non-finite values", info.name)));
        }
        target.data.copy_from_slice(&values);
    }
    Ok(())
}

impl Model {
    pub fn save(&self, dir: &Path, label: &str) -> Result<()> {
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            body: BundleSpec::Model {
                spec: self.spec.clone(),
                vocab: self.vocab.clone(),
            },
            label: label.to_string(),
            version_id: 0,
            tensors: Vec::new(),
        };
        write_bundle(dir, manifest, &model_tensors(&self.spec, &self.weights))
    }

    pub fn load(dir: &Path) -> Result<(Model, String)> {
        let ctx = dir.display().to_string();
        let (manifest, data) = read_bundle(dir)?;
        let BundleSpec::Model { spec, vocab } = manifest.body else {
            return Err(Error::format(
                ctx,
                format!("expected a model bundle, found {}", manifest.body.kind()),
            ));
        };
        spec.validate()
            .map_err(|e| Error::format(&ctx, e.to_string()))?;
        let mut weights = ModelWeights::zeros(&spec);
        fill_tensors(&ctx, &manifest.tensors, data, model_tensors_mut(&spec, &mut weights))?;
        check_weights(&spec, &weights)?;
        Ok((
            Model {
                spec,
                weights,
                vocab,
            },
            manifest.label,
        ))
    }
}
