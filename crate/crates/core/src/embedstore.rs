//! Query-side token embedding dictionary.
//!
//! Holds the input-embedding rows of the query arm keyed by token string so
//! the online frontend never needs the offline id mapping. Only the `top_k`
//! most frequent tokens per field are kept; [`coverage`] measures what that
//! truncation costs on a query log.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::frontend::QueryFeatures;
use crate::splitter::QueryArmBundle;

pub const EMBD_MAGIC: &[u8; 4] = b"EMBD";
pub const EMBD_FORMAT_VERSION: u8 = 1;
pub const DEFAULT_SIZE_BUDGET: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDict {
    pub embed_dim: usize,
    entries: Vec<(String, Vec<f32>)>,
    index: HashMap<String, usize>,
}

impl FieldDict {
    fn new(embed_dim: usize, entries: Vec<(String, Vec<f32>)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        FieldDict {
            embed_dim,
            entries,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| self.entries[i].1.as_slice())
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDictionary {
    pub version_id: u16,
    pub fields: BTreeMap<u16, FieldDict>,
}

impl EmbeddingDictionary {
    pub fn empty(version_id: u16) -> Self {
        EmbeddingDictionary {
            version_id,
            fields: BTreeMap::new(),
        }
    }

    /// `None` is a miss; the caller decides what a miss means.
    pub fn lookup(&self, field_id: u16, token: &str) -> Option<&[f32]> {
        self.fields.get(&field_id)?.get(token)
    }

    pub fn len(&self) -> usize {
        self.fields.values().map(FieldDict::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn serialized_size(&self) -> u64 {
        let mut n = 4 + 1 + 2 + 2;
        for f in self.fields.values() {
            n += 2 + 2 + 4;
            for (t, v) in &f.entries {
                n += 2 + t.len() + 4 * v.len();
            }
        }
        n as u64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(EMBD_MAGIC);
        w.u8(EMBD_FORMAT_VERSION);
        w.u16(self.version_id);
        w.u16(self.fields.len() as u16);
        for (&field_id, f) in &self.fields {
            w.u16(field_id);
            w.u16(u16::try_from(f.embed_dim).map_err(|_| Error::input("embed_dim exceeds u16"))?);
            w.u32(f.entries.len() as u32);
            for (token, v) in &f.entries {
                w.str16(token, "token")?;
                for &x in v {
                    w.f32(x);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], ctx: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, ctx);
        r.magic(EMBD_MAGIC)?;
        let fmt = r.u8()?;
        if fmt != EMBD_FORMAT_VERSION {
            return Err(r.err(format!("unsupported dictionary format version {fmt}")));
        }
        let version_id = r.u16()?;
        let n_fields = r.u16()?;
        let mut fields = BTreeMap::new();
        for _ in 0..n_fields {
            let field_id = r.u16()?;
            let dim = r.u16()? as usize;
            let n = r.u32()? as usize;
            let n = r.count(n, 2 + 4 * dim)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let token = r.str16()?;
                let v = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                entries.push((token, v));
            }
            if fields.insert(field_id, FieldDict::new(dim, entries)).is_some() {
                return Err(r.err(format!("field {field_id} appears twice")));
            }
        }
        r.finish()?;
        Ok(EmbeddingDictionary { version_id, fields })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Extract the `top_k[field]` most frequent tokens' embedding rows from the
/// query arm. Fields absent from `top_k` keep every token; ties in frequency
/// go to the lexicographically smaller token.
pub fn build_dictionary(
    bundle: &QueryArmBundle,
    token_table: &BTreeMap<u16, HashMap<String, u32>>,
    top_k: &BTreeMap<u16, usize>,
    frequency: &BTreeMap<u16, HashMap<String, u64>>,
) -> Result<EmbeddingDictionary> {
    build_dictionary_with_budget(bundle, token_table, top_k, frequency, DEFAULT_SIZE_BUDGET)
}

pub fn build_dictionary_with_budget(
    bundle: &QueryArmBundle,
    token_table: &BTreeMap<u16, HashMap<String, u32>>,
    top_k: &BTreeMap<u16, usize>,
    frequency: &BTreeMap<u16, HashMap<String, u64>>,
    size_budget: u64,
) -> Result<EmbeddingDictionary> {
    let mut fields = BTreeMap::new();
    for (fi, f) in bundle.spec.fields.iter().enumerate() {
        let Some(table) = token_table.get(&f.field_id) else {
            continue;
        };
        let freq = frequency.get(&f.field_id);
        let mut ranked: Vec<(&String, u32, u64)> = Vec::with_capacity(table.len());
        for (tok, &id) in table {
            if id as usize >= f.vocab_size {
                return Err(Error::input(format!(
                    "token {tok:?} has id {id}, beyond field {} vocab of {}",
                    f.field_id, f.vocab_size
                )));
            }
            let count = freq.and_then(|m| m.get(tok)).copied().unwrap_or(0);
            ranked.push((tok, id, count));
        }
        ranked.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
        let k = top_k.get(&f.field_id).copied().unwrap_or(usize::MAX);
        ranked.truncate(k);
        let emb = &bundle.weights.tables[fi];
        let entries = ranked
            .into_iter()
            .map(|(tok, id, _)| (tok.clone(), emb.row(id as usize).to_vec()))
            .collect();
        fields.insert(f.field_id, FieldDict::new(f.embed_dim, entries));
    }
    let dict = EmbeddingDictionary {
        version_id: bundle.version.version_id,
        fields,
    };
    let size = dict.serialized_size();
    if size > size_budget {
        log::warn!("embedding dictionary is {size} bytes, over the {size_budget} byte budget");
    }
    Ok(dict)
}

/// Dictionary from the bundle's own vocabulary, keeping `top_k` tokens per
/// field ranked by their recorded query-log frequency.
pub fn build_from_vocab(bundle: &QueryArmBundle, top_k: Option<usize>) -> Result<EmbeddingDictionary> {
    let mut tables = BTreeMap::new();
    let mut freqs = BTreeMap::new();
    let mut ks = BTreeMap::new();
    for (&field, v) in &bundle.vocab.fields {
        tables.insert(field, v.token_table());
        freqs.insert(field, v.frequencies());
        if let Some(k) = top_k {
            ks.insert(field, k);
        }
    }
    build_dictionary(bundle, &tables, &ks, &freqs)
}

/// Fraction of `(field, token)` occurrences in the log the dictionary resolves.
/// A log without any token occurrences has nothing to miss and scores 1.
pub fn coverage(dict: &EmbeddingDictionary, query_log: &[QueryFeatures]) -> Result<f64> {
    if query_log.is_empty() {
        return Err(Error::input("coverage needs a non-empty query log"));
    }
    let (mut hit, mut total) = (0u64, 0u64);
    for q in query_log {
        for (field, token) in q.token_occurrences() {
            total += 1;
            if dict.lookup(field, token).is_some() {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}
