use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Field ids used on both the query and member side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldLayout {
    /// Character-trigram field fed to both arms.
    pub text_field: u16,
    /// Whole lowercase words; indexed and matched, not an arm input.
    pub word_field: u16,
    /// Facet name -> field id.
    pub facets: BTreeMap<String, u16>,
}

impl Default for FieldLayout {
    fn default() -> Self {
        FieldLayout {
            text_field: 0,
            word_field: 4,
            facets: [("skill", 1), ("title", 2), ("company", 3)]
                .into_iter()
                .map(|(n, id)| (n.to_string(), id))
                .collect(),
        }
    }
}

impl FieldLayout {
    /// Facet names resolve through the table; bare integers are taken as ids.
    pub fn facet_id(&self, name: &str) -> Option<u16> {
        self.facets.get(name).copied().or_else(|| name.parse().ok())
    }
}

/// Parsed query: trigrams of the free text, facet selections, raw words.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFeatures {
    pub text_field: u16,
    pub trigrams: Vec<String>,
    #[serde(with = "crate::field_keys")]
    pub facets: BTreeMap<u16, Vec<String>>,
    pub raw_terms: Vec<String>,
}

impl QueryFeatures {
    /// Query-arm input tokens per field.
    pub fn arm_tokens(&self) -> BTreeMap<u16, Vec<String>> {
        let mut out = self.facets.clone();
        if !self.trigrams.is_empty() {
            out.entry(self.text_field)
                .or_default()
                .extend(self.trigrams.iter().cloned());
        }
        out
    }

    /// Every `(field, token)` occurrence fed to the query arm, in order.
    pub fn token_occurrences(&self) -> impl Iterator<Item = (u16, &str)> {
        self.trigrams
            .iter()
            .map(move |t| (self.text_field, t.as_str()))
            .chain(
                self.facets
                    .iter()
                    .flat_map(|(&f, ts)| ts.iter().map(move |t| (f, t.as_str()))),
            )
    }

    /// Retrieval and term-match terms: facet tokens plus raw words on the
    /// word field, de-duplicated in first-seen order.
    pub fn terms(&self, layout: &FieldLayout) -> Vec<(u16, String)> {
        let mut out: Vec<(u16, String)> = Vec::new();
        let all = self
            .facets
            .iter()
            .flat_map(|(&f, ts)| ts.iter().map(move |t| (f, t.clone())))
            .chain(self.raw_terms.iter().map(|w| (layout.word_field, w.clone())));
        for term in all {
            if !out.contains(&term) {
                out.push(term);
            }
        }
        out
    }
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Character trigrams of `#word#`.
pub fn word_trigrams(word: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('#')
        .chain(word.chars())
        .chain(std::iter::once('#'))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn text_trigrams(text: &str) -> Vec<String> {
    words(text).iter().flat_map(|w| word_trigrams(w)).collect()
}

/// Unknown facet names are ignored.
pub fn parse_query(
    layout: &FieldLayout,
    raw_text: &str,
    facets: &BTreeMap<String, Vec<String>>,
) -> QueryFeatures {
    let raw_terms = words(raw_text);
    let trigrams = raw_terms.iter().flat_map(|w| word_trigrams(w)).collect();
    let mut by_field: BTreeMap<u16, Vec<String>> = BTreeMap::new();
    for (name, values) in facets {
        match layout.facet_id(name) {
            Some(id) => by_field.entry(id).or_default().extend(values.iter().cloned()),
            None => log::debug!("ignoring unknown facet {name:?}"),
        }
    }
    QueryFeatures {
        text_field: layout.text_field,
        trigrams,
        facets: by_field,
        raw_terms,
    }
}
