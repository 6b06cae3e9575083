//! Precision@k against relevance judgments.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Judgment;
use crate::wire::SearchHit;

/// Ranked results of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub qid: u64,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    /// Mean precision@k over evaluated queries (0 when none were evaluated).
    pub mean: f64,
    pub evaluated: usize,
    /// Run queries without judgments.
    pub skipped: usize,
    /// Mean over evaluated queries flagged as synonym queries.
    pub synonym_mean: Option<f64>,
    pub synonym_evaluated: usize,
    pub per_query: Vec<(u64, f64)>,
}

/// `|relevant ∩ top-k| / k`.
pub fn precision_at_k(ranked: &[u64], relevant: &HashSet<u64>, k: usize) -> f64 {
    let hits = ranked.iter().take(k).filter(|u| relevant.contains(u)).count();
    hits as f64 / k as f64
}

pub fn evaluate(run: &[RunRecord], judgments: &[Judgment], k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::input("k must be >= 1"));
    }
    let judged: HashMap<u64, (HashSet<u64>, bool)> = judgments
        .iter()
        .map(|j| (j.qid, (j.relevant.iter().copied().collect(), j.synonym)))
        .collect();
    let mut per_query = Vec::new();
    let mut skipped = 0;
    let (mut syn_sum, mut syn_n) = (0.0, 0usize);
    for r in run {
        let Some((relevant, synonym)) = judged.get(&r.qid) else {
            skipped += 1;
            continue;
        };
        let uids: Vec<u64> = r.hits.iter().map(|h| h.uid).collect();
        let p = precision_at_k(&uids, relevant, k);
        if *synonym {
            syn_sum += p;
            syn_n += 1;
        }
        per_query.push((r.qid, p));
    }
    let evaluated = per_query.len();
    let mean = if evaluated == 0 {
        0.0
    } else {
        per_query.iter().map(|(_, p)| p).sum::<f64>() / evaluated as f64
    };
    Ok(EvalReport {
        k,
        mean,
        evaluated,
        skipped,
        synonym_mean: (syn_n > 0).then(|| syn_sum / syn_n as f64),
        synonym_evaluated: syn_n,
        per_query,
    })
}
