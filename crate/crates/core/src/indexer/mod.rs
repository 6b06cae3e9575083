//! Offline batch pipeline: ingest member profiles, run the member arm over
//! them, compress the vectors and write per-shard inverted + forward indexes
//! with the model version stamped into every forward record.

mod format;
mod quant;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use format::{
    shard_dir, ForwardIndex, ForwardRecord, InvertedIndex, QuantScheme, ShardIndex, ShardMeta,
    Term, VectorPayload, FORWARD_FILE, FWDX_MAGIC, INVERTED_FILE, INVX_MAGIC, SHARD_META_FILE,
};
pub use quant::{dequantize, quantize, QuantizedVector};

use crate::error::{Error, Result};
use crate::splitter::MemberArmBundle;

/// A document: globally unique id plus attribute tokens per field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberProfile {
    pub uid: u64,
    #[serde(with = "crate::field_keys")]
    pub fields: BTreeMap<u16, Vec<String>>,
}

/// Newline-delimited JSON, one `{"uid": .., "fields": {..}}` per line.
pub fn ingest_members(path: &Path) -> Result<Vec<MemberProfile>> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: MemberProfile = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !seen.insert(p.uid) {
            return Err(Error::input(format!(
                "{}:{}: duplicate uid {}",
                path.display(),
                i + 1,
                p.uid
            )));
        }
        out.push(p);
    }
    Ok(out)
}

/// Member-arm output per uid. Batches only group the work; each member's
/// vector is computed independently, so results do not depend on `batch_size`.
pub fn compute_member_vectors(
    bundle: &MemberArmBundle,
    profiles: &[MemberProfile],
    batch_size: usize,
) -> Result<BTreeMap<u64, Vec<f32>>> {
    if batch_size == 0 {
        return Err(Error::input("batch_size must be >= 1"));
    }
    let mut out = BTreeMap::new();
    for batch in profiles.chunks(batch_size) {
        for p in batch {
            let inputs = bundle.vocab.encode(&bundle.spec, &p.fields);
            out.insert(p.uid, bundle.forward(&inputs)?);
        }
    }
    Ok(out)
}

pub fn shard_of(uid: u64, num_shards: u32) -> u32 {
    (uid % num_shards as u64) as u32
}

/// Build the forward record for one member.
pub fn make_record(
    profile: &MemberProfile,
    vector: Option<&[f32]>,
    dim: usize,
    version_id: u16,
    scheme: QuantScheme,
) -> Result<ForwardRecord> {
    let (field_version, payload) = match vector {
        Some(v) => {
            if v.len() != dim {
                return Err(Error::Build(format!(
                    "member {} vector has dim {}, expected {dim}",
                    profile.uid,
                    v.len()
                )));
            }
            if version_id == 0 {
                return Err(Error::Build("version id 0 is reserved for records without a vector".into()));
            }
            let payload = match scheme {
                QuantScheme::Int8 => VectorPayload::Int8(quantize(v)?),
                QuantScheme::None => VectorPayload::Float(v.to_vec()),
            };
            (version_id, payload)
        }
        None => (
            0,
            match scheme {
                QuantScheme::Int8 => VectorPayload::Int8(QuantizedVector::zeros(dim)),
                QuantScheme::None => VectorPayload::Float(vec![0.0; dim]),
            },
        ),
    };
    Ok(ForwardRecord {
        uid: profile.uid,
        field_version,
        vector: payload,
        stored: profile.fields.clone(),
    })
}

/// Partition members by `uid mod num_shards` and build each shard's indexes.
pub fn build_shards(
    profiles: &[MemberProfile],
    vectors: &BTreeMap<u64, Vec<f32>>,
    num_shards: u32,
    version_id: u16,
    scheme: QuantScheme,
) -> Result<Vec<ShardIndex>> {
    if num_shards == 0 {
        return Err(Error::Build("num_shards must be >= 1".into()));
    }
    if profiles.is_empty() {
        return Err(Error::Build("refusing to build an index with no members".into()));
    }
    let dim = vectors
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::Build("no member vectors".into()))?;
    let mut per_shard: Vec<Vec<ForwardRecord>> = vec![Vec::new(); num_shards as usize];
    for p in profiles {
        let v = vectors
            .get(&p.uid)
            .ok_or_else(|| Error::Build(format!("missing vector for uid {}", p.uid)))?;
        per_shard[shard_of(p.uid, num_shards) as usize].push(make_record(p, Some(v), dim, version_id, scheme)?);
    }
    per_shard
        .into_iter()
        .enumerate()
        .map(|(i, records)| {
            let inverted = InvertedIndex::from_records(&records);
            Ok(ShardIndex {
                meta: ShardMeta {
                    shard_id: i as u32,
                    num_shards,
                },
                forward: ForwardIndex::new(dim, scheme, records)?,
                inverted,
            })
        })
        .collect()
}

/// Write every shard under `out/shard<i>/`.
pub fn write_shards(out: &Path, shards: &[ShardIndex]) -> Result<()> {
    for s in shards {
        s.write(&shard_dir(out, s.meta.shard_id))?;
    }
    Ok(())
}
