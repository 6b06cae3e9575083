//! Serde adapter for maps keyed by field id. JSON object keys are strings;
//! parsing them explicitly keeps such maps readable inside tagged or
//! flattened containers, where serde cannot coerce string keys to integers.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<V: Serialize, S: Serializer>(map: &BTreeMap<u16, V>, s: S) -> Result<S::Ok, S::Error> {
    map.serialize(s)
}

pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u16, V>, D::Error> {
    BTreeMap::<String, V>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| {
            k.parse::<u16>()
                .map(|id| (id, v))
                .map_err(|_| D::Error::custom(format!("field id {k:?} is not an integer in 0..=65535")))
        })
        .collect()
}
