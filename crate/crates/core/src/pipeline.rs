//! Glue from raw query-log records and member profiles to a trained model.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{parse_query, FieldLayout};
use crate::indexer::MemberProfile;
use crate::nncore::{
    train, InitConfig, Model, ModelSpec, ModelVocab, TrainConfig, TrainExample, TrainReport, Vocab,
};

/// One query-log judgment before tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub facets: BTreeMap<String, Vec<String>>,
    pub positive_uid: u64,
    pub negative_uid: u64,
}

fn arm_tokens(layout: &FieldLayout, r: &TrainRecord) -> BTreeMap<u16, Vec<String>> {
    parse_query(layout, &r.text, &r.facets).arm_tokens()
}

/// Member vocabulary from the corpus; query vocabulary (with log
/// frequencies) from the training queries.
pub fn build_vocabs(layout: &FieldLayout, members: &[MemberProfile], records: &[TrainRecord]) -> ModelVocab {
    let mut member: BTreeMap<u16, HashMap<String, u64>> = BTreeMap::new();
    for m in members {
        for (&f, ts) in &m.fields {
            let counts = member.entry(f).or_default();
            for t in ts {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
    }
    let mut query: BTreeMap<u16, HashMap<String, u64>> = BTreeMap::new();
    for r in records {
        for (f, ts) in arm_tokens(layout, r) {
            let counts = query.entry(f).or_default();
            for t in ts {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    ModelVocab {
        query: Vocab::from_counts(&query),
        member: Vocab::from_counts(&member),
    }
}

/// Default template: text trigrams plus the skill, title and company facets
/// on both arms, vocabulary sizes taken from the data.
pub fn default_template(layout: &FieldLayout, embed_dim: usize) -> ModelSpec {
    let mut fields = vec![(layout.text_field, 0)];
    for name in ["skill", "title", "company"] {
        if let Some(id) = layout.facet_id(name) {
            fields.push((id, 0));
        }
    }
    ModelSpec::default_for_fields(&fields, embed_dim)
}

/// Fill zero vocabulary sizes from `vocab`; explicit sizes must cover it.
pub fn resolve_spec(template: &ModelSpec, vocab: &ModelVocab) -> Result<ModelSpec> {
    let mut spec = template.clone();
    for (arm, v) in [(&mut spec.query_arm, &vocab.query), (&mut spec.member_arm, &vocab.member)] {
        for f in &mut arm.fields {
            let have = v.field(f.field_id).map_or(0, |fv| fv.len());
            if f.vocab_size == 0 {
                f.vocab_size = have.max(1);
            } else if f.vocab_size < have {
                return Err(Error::Config(format!(
                    "field {} declares vocab_size {} but the data has {have} tokens",
                    f.field_id, f.vocab_size
                )));
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Token ids for every record; unknown member uids are an input error.
pub fn encode_examples(
    model: &Model,
    layout: &FieldLayout,
    members: &[MemberProfile],
    records: &[TrainRecord],
) -> Result<Vec<TrainExample>> {
    let by_uid: HashMap<u64, &MemberProfile> = members.iter().map(|m| (m.uid, m)).collect();
    let member = |uid: u64| {
        by_uid
            .get(&uid)
            .map(|m| model.vocab.member.encode(&model.spec.member_arm, &m.fields))
            .ok_or_else(|| Error::input(format!("training record references unknown uid {uid}")))
    };
    records
        .iter()
        .map(|r| {
            Ok(TrainExample {
                query: model.vocab.query.encode(&model.spec.query_arm, &arm_tokens(layout, r)),
                positive: member(r.positive_uid)?,
                negative: member(r.negative_uid)?,
                positive_uid: r.positive_uid,
                negative_uid: r.negative_uid,
            })
        })
        .collect()
}

/// Build vocabularies, initialize from `cfg.seed` and train.
pub fn train_model(
    layout: &FieldLayout,
    members: &[MemberProfile],
    records: &[TrainRecord],
    template: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let vocab = build_vocabs(layout, members, records);
    let spec = resolve_spec(template, &vocab)?;
    let mut model = Model::init(
        spec,
        InitConfig {
            seed: cfg.seed,
            ..InitConfig::default()
        },
    )?;
    model.vocab = vocab;
    let examples = encode_examples(&model, layout, members, records)?;
    let (weights, report) = train(&model, &examples, cfg)?;
    model.weights = weights;
    Ok((model, report))
}
