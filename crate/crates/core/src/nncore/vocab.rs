use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::forward::FieldTokens;
use super::spec::ArmSpec;

/// Token strings of one field in id order, with the frequency that ranked them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "FieldVocabRepr", into = "FieldVocabRepr")]
pub struct FieldVocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct FieldVocabRepr {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<FieldVocabRepr> for FieldVocab {
    fn from(r: FieldVocabRepr) -> Self {
        FieldVocab::from_ordered(r.tokens, r.counts)
    }
}

impl From<FieldVocab> for FieldVocabRepr {
    fn from(v: FieldVocab) -> Self {
        FieldVocabRepr {
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl FieldVocab {
    fn from_ordered(tokens: Vec<String>, mut counts: Vec<u64>) -> Self {
        counts.resize(tokens.len(), 0);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        FieldVocab {
            tokens,
            counts,
            index,
        }
    }

    /// Ids assigned by descending count, ties broken by token string.
    pub fn from_counts(counts: &HashMap<String, u64>) -> Self {
        let mut pairs: Vec<(&String, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let (tokens, counts) = pairs.into_iter().map(|(t, c)| (t.clone(), c)).unzip();
        FieldVocab::from_ordered(tokens, counts)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_table(&self) -> HashMap<String, u32> {
        self.index.clone()
    }

    pub fn frequencies(&self) -> HashMap<String, u64> {
        self.tokens
            .iter()
            .cloned()
            .zip(self.counts.iter().copied())
            .collect()
    }
}

/// String-to-id mapping for every field of one arm.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    #[serde(with = "crate::field_keys")]
    pub fields: BTreeMap<u16, FieldVocab>,
}

impl Vocab {
    pub fn from_counts(counts: &BTreeMap<u16, HashMap<String, u64>>) -> Self {
        Vocab {
            fields: counts
                .iter()
                .map(|(&f, c)| (f, FieldVocab::from_counts(c)))
                .collect(),
        }
    }

    pub fn field(&self, field_id: u16) -> Option<&FieldVocab> {
        self.fields.get(&field_id)
    }

    /// Map token strings to ids for every field the arm declares. Tokens the
    /// vocabulary does not know are dropped; absent fields become empty lists.
    pub fn encode(&self, spec: &ArmSpec, tokens: &BTreeMap<u16, Vec<String>>) -> FieldTokens {
        spec.fields
            .iter()
            .map(|f| {
                let ids = match (self.fields.get(&f.field_id), tokens.get(&f.field_id)) {
                    (Some(v), Some(ts)) => ts.iter().filter_map(|t| v.id(t)).collect(),
                    _ => Vec::new(),
                };
                (f.field_id, ids)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelVocab {
    pub query: Vocab,
    pub member: Vocab,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_frequency_then_token() {
        let counts: HashMap<String, u64> = [("b", 3), ("a", 3), ("c", 9)]
            .into_iter()
            .map(|(t, c)| (t.to_string(), c))
            .collect();
        let v = FieldVocab::from_counts(&counts);
        assert_eq!(v.tokens(), ["c", "a", "b"]);
        assert_eq!(v.id("a"), Some(1));
        assert_eq!(v.count(0), 9);
    }

    #[test]
    fn serde_rebuilds_the_index() {
        let counts: HashMap<String, u64> = [("x".to_string(), 1)].into_iter().collect();
        let v = FieldVocab::from_counts(&counts);
        let back: FieldVocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back.id("x"), Some(0));
        assert_eq!(back, v);
    }
}
