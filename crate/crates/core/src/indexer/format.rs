//! Forward (`FWDX`) and inverted (`INVX`) index files. All little-endian.
//!
//! ```text
//! FWDX  magic, format u8, dim u16, scheme u8 (0 = f32, 1 = int8), count u32
//!       per record: uid u64, field_version u16, scale f32,
//!                   dim x i8 (scheme 1) or dim x f32 (scheme 0),
//!                   group count u16, per group: field_id u16, count u16,
//!                   count x (len u16, UTF-8)
//! INVX  magic, term count u32
//!       per term: len u16, UTF-8 "<field_id>:<token>", uid count u32, uids u64
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quant::{dequantize_into, QuantizedVector};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const FWDX_MAGIC: &[u8; 4] = b"FWDX";
pub const INVX_MAGIC: &[u8; 4] = b"INVX";
pub const FWDX_FORMAT_VERSION: u8 = 1;

pub const FORWARD_FILE: &str = "forward.fwdx";
pub const INVERTED_FILE: &str = "inverted.invx";
pub const SHARD_META_FILE: &str = "shard.json";

/// `(field_id, token)`.
pub type Term = (u16, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    None,
    Int8,
}

impl QuantScheme {
    fn code(self) -> u8 {
        match self {
            QuantScheme::None => 0,
            QuantScheme::Int8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VectorPayload {
    Float(Vec<f32>),
    Int8(QuantizedVector),
}

impl VectorPayload {
    pub fn dim(&self) -> usize {
        match self {
            VectorPayload::Float(v) => v.len(),
            VectorPayload::Int8(q) => q.values.len(),
        }
    }

    pub fn scheme(&self) -> QuantScheme {
        match self {
            VectorPayload::Float(_) => QuantScheme::None,
            VectorPayload::Int8(_) => QuantScheme::Int8,
        }
    }

    /// Write the float view of the stored vector into `out`.
    #[inline]
    pub fn decode_into(&self, out: &mut Vec<f32>) {
        match self {
            VectorPayload::Float(v) => {
                out.clear();
                out.extend_from_slice(v);
            }
            VectorPayload::Int8(q) => dequantize_into(q.scale, &q.values, out),
        }
    }
}

/// Per-member forward-index entry. `field_version == 0` means the record has
/// no semantic vector (the payload is all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub uid: u64,
    pub field_version: u16,
    pub vector: VectorPayload,
    pub stored: BTreeMap<u16, Vec<String>>,
}

impl ForwardRecord {
    pub fn has_vector(&self) -> bool {
        self.field_version != 0
    }

    pub fn has_term(&self, field: u16, token: &str) -> bool {
        self.stored
            .get(&field)
            .is_some_and(|ts| ts.iter().any(|t| t == token))
    }

    pub fn terms(&self) -> impl Iterator<Item = (u16, &str)> {
        self.stored
            .iter()
            .flat_map(|(&f, ts)| ts.iter().map(move |t| (f, t.as_str())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardIndex {
    pub dim: usize,
    pub scheme: QuantScheme,
    records: Vec<ForwardRecord>,
    pos: HashMap<u64, usize>,
}

impl ForwardIndex {
    /// Records are sorted by uid; duplicates and dim/scheme mismatches are rejected.
    pub fn new(dim: usize, scheme: QuantScheme, mut records: Vec<ForwardRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.uid);
        for w in records.windows(2) {
            if w[0].uid == w[1].uid {
                return Err(Error::Build(format!("uid {} appears twice", w[0].uid)));
            }
        }
        for r in &records {
            if r.vector.dim() != dim || r.vector.scheme() != scheme {
                return Err(Error::Build(format!(
                    "record {} does not match index dim {dim} / scheme {scheme:?}",
                    r.uid
                )));
            }
        }
        let pos = records.iter().enumerate().map(|(i, r)| (r.uid, i)).collect();
        Ok(ForwardIndex {
            dim,
            scheme,
            records,
            pos,
        })
    }

    pub fn get(&self, uid: u64) -> Option<&ForwardRecord> {
        self.pos.get(&uid).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[ForwardRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(FWDX_MAGIC);
        w.u8(FWDX_FORMAT_VERSION);
        w.u16(u16::try_from(self.dim).map_err(|_| Error::input("vector dim exceeds u16"))?);
        w.u8(self.scheme.code());
        w.u32(u32::try_from(self.records.len()).map_err(|_| Error::input("too many records"))?);
        for r in &self.records {
            w.u64(r.uid);
            w.u16(r.field_version);
            match &r.vector {
                VectorPayload::Int8(q) => {
                    w.f32(q.scale);
                    w.bytes(&q.values.iter().map(|&v| v as u8).collect::<Vec<_>>());
                }
                VectorPayload::Float(v) => {
                    w.f32(1.0);
                    v.iter().for_each(|&x| w.f32(x));
                }
            }
            w.u16(r.stored.len() as u16);
            for (&field, tokens) in &r.stored {
                w.u16(field);
                w.u16(u16::try_from(tokens.len()).map_err(|_| Error::input("too many stored tokens"))?);
                for t in tokens {
                    w.str16(t, "stored token")?;
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], ctx: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, ctx);
        r.magic(FWDX_MAGIC)?;
        let fmt = r.u8()?;
        if fmt != FWDX_FORMAT_VERSION {
            return Err(r.err(format!("unsupported forward index format {fmt}")));
        }
        let dim = r.u16()? as usize;
        let scheme = match r.u8()? {
            0 => QuantScheme::None,
            1 => QuantScheme::Int8,
            other => return Err(r.err(format!("unknown quantization scheme {other}"))),
        };
        let elem = if scheme == QuantScheme::Int8 { 1 } else { 4 };
        let n = r.u32()? as usize;
        let n = r.count(n, 8 + 2 + 4 + dim * elem + 2)?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let uid = r.u64()?;
            let field_version = r.u16()?;
            let scale = r.f32()?;
            let vector = match scheme {
                QuantScheme::Int8 => VectorPayload::Int8(QuantizedVector {
                    scale,
                    values: r.take(dim)?.iter().map(|&b| b as i8).collect(),
                }),
                QuantScheme::None => {
                    VectorPayload::Float((0..dim).map(|_| r.f32()).collect::<Result<_>>()?)
                }
            };
            let groups = r.u16()?;
            let mut stored = BTreeMap::new();
            for _ in 0..groups {
                let field = r.u16()?;
                let count = r.u16()? as usize;
                let tokens = (0..count).map(|_| r.str16()).collect::<Result<Vec<_>>>()?;
                stored.insert(field, tokens);
            }
            records.push(ForwardRecord {
                uid,
                field_version,
                vector,
                stored,
            });
        }
        r.finish()?;
        for w in records.windows(2) {
            if w[0].uid >= w[1].uid {
                return Err(Error::format(ctx, format!("records not strictly ordered at uid {}", w[1].uid)));
            }
        }
        ForwardIndex::new(dim, scheme, records).map_err(|e| Error::format(ctx, e.to_string()))
    }
}

/// Term -> strictly increasing uid postings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<Term, Vec<u64>>,
}

impl InvertedIndex {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ForwardRecord>) -> Self {
        let mut postings: BTreeMap<Term, Vec<u64>> = BTreeMap::new();
        for r in records {
            for (f, t) in r.terms() {
                postings.entry((f, t.to_string())).or_default().push(r.uid);
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        InvertedIndex { postings }
    }

    pub fn postings(&self, field: u16, token: &str) -> &[u64] {
        // BTreeMap<(u16, String), _> cannot be probed with a borrowed &str,
        // so the probe key is built once per lookup.
        self.postings
            .get(&(field, token.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Term, &[u64])> {
        self.postings.iter().map(|(t, p)| (t, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(INVX_MAGIC);
        w.u32(self.postings.len() as u32);
        for ((field, token), uids) in &self.postings {
            w.str16(&format!("{field}:{token}"), "term")?;
            w.u32(uids.len() as u32);
            uids.iter().for_each(|&u| w.u64(u));
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], ctx: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, ctx);
        r.magic(INVX_MAGIC)?;
        let n = r.u32()? as usize;
        let n = r.count(n, 2 + 4)?;
        let mut postings = BTreeMap::new();
        for _ in 0..n {
            let raw = r.str16()?;
            let (field, token) = raw
                .split_once(':')
                .and_then(|(f, t)| Some((f.parse::<u16>().ok()?, t.to_string())))
                .ok_or_else(|| r.err(format!("malformed term {raw:?}")))?;
            let count = r.u32()? as usize;
            let count = r.count(count, 8)?;
            let uids = (0..count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            if uids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(r.err(format!("postings for {raw:?} are not strictly increasing")));
            }
            if postings.insert((field, token), uids).is_some() {
                return Err(r.err(format!("term {raw:?} appears twice")));
            }
        }
        r.finish()?;
        Ok(InvertedIndex { postings })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardMeta {
    pub shard_id: u32,
    pub num_shards: u32,
}

/// One shard's inverted and forward index.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardIndex {
    pub meta: ShardMeta,
    pub forward: ForwardIndex,
    pub inverted: InvertedIndex,
}

impl ShardIndex {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FORWARD_FILE), self.forward.to_bytes()?)?;
        fs::write(dir.join(INVERTED_FILE), self.inverted.to_bytes()?)?;
        fs::write(dir.join(SHARD_META_FILE), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let fwd_path = dir.join(FORWARD_FILE);
        let inv_path = dir.join(INVERTED_FILE);
        let meta_path = dir.join(SHARD_META_FILE);
        let forward = ForwardIndex::from_bytes(&fs::read(&fwd_path)?, &fwd_path.display().to_string())?;
        let inverted = InvertedIndex::from_bytes(&fs::read(&inv_path)?, &inv_path.display().to_string())?;
        let meta: ShardMeta = serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| Error::format(meta_path.display().to_string(), e.to_string()))?;
        Ok(ShardIndex {
            meta,
            forward,
            inverted,
        })
    }
}

pub fn shard_dir(root: &Path, shard_id: u32) -> std::path::PathBuf {
    root.join(format!("shard{shard_id}"))
}
