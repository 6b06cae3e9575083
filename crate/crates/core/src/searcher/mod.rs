//! A searcher node: one shard snapshot, candidate retrieval with early
//! termination, per-hit similarity scoring and copy-on-write live updates.
//!
//! Scoring reads only the snapshot and the request; nothing here holds a
//! network handle. The TCP front door lives in [`server`].

mod retrieve;
pub mod server;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use arc_swap::ArcSwap;

pub use retrieve::{Collector, FirstN};

use crate::error::{Error, Result};
use crate::indexer::{make_record, shard_of, ForwardRecord, MemberProfile, ShardIndex, Term};
use crate::splitter::CrossBundle;
use crate::wire::{HitsResponse, RetrieveMode, SearchHit, SearchRequest, SearchTiming, UpdateRequest};

/// Live-update records layered over the base index; they shadow base
/// records with the same uid.
#[derive(Debug, Clone, Default)]
struct Overlay {
    records: BTreeMap<u64, Arc<ForwardRecord>>,
    postings: BTreeMap<Term, Vec<u64>>,
}

impl Overlay {
    fn insert(&mut self, record: ForwardRecord) {
        if let Some(old) = self.records.get(&record.uid) {
            for (f, t) in old.terms() {
                let key = (f, t.to_string());
                if let Some(list) = self.postings.get_mut(&key) {
                    list.retain(|&u| u != record.uid);
                    if list.is_empty() {
                        self.postings.remove(&key);
                    }
                }
            }
        }
        for (f, t) in record.terms() {
            let list = self.postings.entry((f, t.to_string())).or_default();
            if let Err(pos) = list.binary_search(&record.uid) {
                list.insert(pos, record.uid);
            }
        }
        self.records.insert(record.uid, Arc::new(record));
    }
}

/// Immutable view of one shard. Updates produce a new snapshot that shares
/// the base index with this one.
#[derive(Debug, Clone)]
pub struct ShardSnapshot {
    base: Arc<ShardIndex>,
    overlay: Arc<Overlay>,
    version: Option<u16>,
}

/// The model version shared by every record that carries a vector.
fn index_version<'a>(records: impl IntoIterator<Item = &'a ForwardRecord>) -> Result<Option<u16>> {
    let mut version = None;
    for r in records.into_iter().filter(|r| r.has_vector()) {
        match version {
            None => version = Some(r.field_version),
            Some(v) if v != r.field_version => {
                return Err(Error::Version {
                    expected: v,
                    found: r.field_version,
                })
            }
            _ => {}
        }
    }
    Ok(version)
}

impl ShardSnapshot {
    pub fn new(index: ShardIndex) -> Result<Self> {
        let version = index_version(index.forward.records())?;
        Ok(ShardSnapshot {
            base: Arc::new(index),
            overlay: Arc::new(Overlay::default()),
            version,
        })
    }

    pub fn shard_id(&self) -> u32 {
        self.base.meta.shard_id
    }

    pub fn num_shards(&self) -> u32 {
        self.base.meta.num_shards
    }

    /// `None` when no record carries a vector yet.
    pub fn version(&self) -> Option<u16> {
        self.version
    }

    pub fn base(&self) -> &ShardIndex {
        &self.base
    }

    pub fn overlay_len(&self) -> usize {
        self.overlay.records.len()
    }

    /// Overlay first, then the base forward index.
    pub fn record(&self, uid: u64) -> Option<&ForwardRecord> {
        match self.overlay.records.get(&uid) {
            Some(r) => Some(r),
            None => self.base.forward.get(uid),
        }
    }

    /// Number of distinct members visible in this snapshot.
    pub fn len(&self) -> usize {
        let shadowing = self
            .overlay
            .records
            .keys()
            .filter(|&&u| self.base.forward.get(u).is_some())
            .count();
        self.base.forward.len() + self.overlay.records.len() - shadowing
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Postings for one term with overlay records shadowing base ones.
    fn postings(&self, field: u16, token: &str) -> std::borrow::Cow<'_, [u64]> {
        let base = self.base.inverted.postings(field, token);
        if self.overlay.records.is_empty() {
            return std::borrow::Cow::Borrowed(base);
        }
        let extra: &[u64] = self
            .overlay
            .postings
            .get(&(field, token.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let mut out = Vec::with_capacity(base.len() + extra.len());
        let mut j = 0;
        for &u in base.iter().filter(|u| !self.overlay.records.contains_key(u)) {
            while j < extra.len() && extra[j] < u {
                out.push(extra[j]);
                j += 1;
            }
            out.push(u);
        }
        out.extend_from_slice(&extra[j..]);
        std::borrow::Cow::Owned(out)
    }

    /// Feed matching uids to `collector` in ascending order until it stops.
    pub fn retrieve_with(&self, terms: &[(u16, String)], mode: RetrieveMode, collector: &mut impl Collector) {
        let lists: Vec<_> = terms.iter().map(|(f, t)| self.postings(*f, t)).collect();
        let slices: Vec<&[u64]> = lists.iter().map(|c| c.as_ref()).collect();
        match mode {
            RetrieveMode::Any => retrieve::union(&slices, collector),
            RetrieveMode::All => retrieve::intersection(&slices, collector),
        }
    }

    /// Ascending-uid candidates, cut off after `max_candidates`.
    pub fn retrieve(&self, terms: &[(u16, String)], mode: RetrieveMode, max_candidates: usize) -> Result<Vec<u64>> {
        if max_candidates == 0 {
            return Err(Error::input("max_candidates must be >= 1"));
        }
        let mut c = FirstN::new(max_candidates);
        self.retrieve_with(terms, mode, &mut c);
        Ok(c.into_uids())
    }
}

/// Scoring weights for the two ranking features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights {
    pub w_sem: f32,
    pub w_term: f32,
}

fn check_versions(snapshot: &ShardSnapshot, cross: &CrossBundle, request_version: u16) -> Result<u16> {
    let v = cross.version.version_id;
    if request_version != v {
        return Err(Error::Version {
            expected: v,
            found: request_version,
        });
    }
    if let Some(sv) = snapshot.version {
        if sv != v {
            return Err(Error::Version { expected: sv, found: v });
        }
    }
    Ok(v)
}

/// Score every candidate and sort by score descending, uid ascending.
pub fn score_hits(
    snapshot: &ShardSnapshot,
    candidates: &[u64],
    qrep: &[f32],
    qterms: &[(u16, String)],
    cross: &CrossBundle,
    weights: FeatureWeights,
    request_version: u16,
) -> Result<Vec<SearchHit>> {
    let mut hits = score_candidates(snapshot, candidates, qrep, qterms, cross, weights, request_version)?;
    hits.sort_unstable_by(SearchHit::rank_cmp);
    Ok(hits)
}

fn score_candidates(
    snapshot: &ShardSnapshot,
    candidates: &[u64],
    qrep: &[f32],
    qterms: &[(u16, String)],
    cross: &CrossBundle,
    weights: FeatureWeights,
    request_version: u16,
) -> Result<Vec<SearchHit>> {
    let version = check_versions(snapshot, cross, request_version)?;
    if qrep.len() != cross.query_dim {
        return Err(Error::input(format!(
            "query representation has dim {}, cross layer expects {}",
            qrep.len(),
            cross.query_dim
        )));
    }
    if qrep.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("query representation is not finite"));
    }
    let mut buf = Vec::with_capacity(cross.member_dim);
    let mut hits = Vec::with_capacity(candidates.len());
    for &uid in candidates {
        let Some(rec) = snapshot.record(uid) else {
            continue;
        };
        let semantic = if rec.has_vector() {
            if rec.field_version != version {
                return Err(Error::Version {
                    expected: version,
                    found: rec.field_version,
                });
            }
            rec.vector.decode_into(&mut buf);
            cross.score(qrep, &buf)?
        } else {
            0.0
        };
        let term_match = if qterms.is_empty() {
            0.0
        } else {
            let matched = qterms.iter().filter(|(f, t)| rec.has_term(*f, t)).count();
            matched as f32 / qterms.len() as f32
        };
        hits.push(SearchHit {
            uid,
            score: weights.w_sem * semantic + weights.w_term * term_match,
            semantic,
            term_match,
        });
    }
    Ok(hits)
}

/// Keep the best `k` hits in rank order.
fn top_k(mut hits: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    if hits.len() > k {
        if k > 0 {
            hits.select_nth_unstable_by(k - 1, SearchHit::rank_cmp);
        }
        hits.truncate(k);
    }
    hits.sort_unstable_by(SearchHit::rank_cmp);
    hits
}

/// Retrieve, score and keep the top `k`.
pub fn search(snapshot: &ShardSnapshot, cross: &CrossBundle, req: &SearchRequest) -> Result<HitsResponse> {
    if req.max_candidates == 0 {
        return Err(Error::input("max_candidates must be >= 1"));
    }
    check_versions(snapshot, cross, req.version)?;
    let t0 = Instant::now();
    let candidates = snapshot.retrieve(&req.terms, req.mode, req.max_candidates)?;
    let t1 = Instant::now();
    let weights = FeatureWeights {
        w_sem: req.w_sem,
        w_term: req.w_term,
    };
    let hits = score_candidates(snapshot, &candidates, &req.qrep, &req.terms, cross, weights, req.version)?;
    let hits = top_k(hits, req.k);
    let t2 = Instant::now();
    Ok(HitsResponse {
        shard_id: Some(snapshot.shard_id()),
        hits,
        timing: SearchTiming {
            retrieve_us: (t1 - t0).as_micros() as u64,
            score_us: (t2 - t1).as_micros() as u64,
        },
        degraded: Vec::new(),
    })
}

/// New snapshot with `profile` (and its member vector, if any) in the overlay.
/// The input snapshot is left untouched.
pub fn apply_live_update(
    snapshot: &ShardSnapshot,
    profile: &MemberProfile,
    vector: Option<&[f32]>,
    version: u16,
) -> Result<ShardSnapshot> {
    apply_live_updates(snapshot, &[(profile.clone(), vector.map(<[f32]>::to_vec))], version)
}

/// Batch form of [`apply_live_update`]: one copy of the overlay for all updates.
pub fn apply_live_updates(
    snapshot: &ShardSnapshot,
    updates: &[(MemberProfile, Option<Vec<f32>>)],
    version: u16,
) -> Result<ShardSnapshot> {
    if let Some(v) = snapshot.version {
        if v != version {
            return Err(Error::Version { expected: v, found: version });
        }
    }
    let fwd = &snapshot.base.forward;
    let mut overlay = (*snapshot.overlay).clone();
    for (profile, vector) in updates {
        let owner = shard_of(profile.uid, snapshot.num_shards());
        if owner != snapshot.shard_id() {
            return Err(Error::input(format!(
                "uid {} belongs to shard {owner}, not {}",
                profile.uid,
                snapshot.shard_id()
            )));
        }
        overlay.insert(make_record(profile, vector.as_deref(), fwd.dim, version, fwd.scheme)?);
    }
    let has_vector = updates.iter().any(|(_, v)| v.is_some());
    Ok(ShardSnapshot {
        base: snapshot.base.clone(),
        overlay: Arc::new(overlay),
        version: snapshot.version.or(has_vector.then_some(version)),
    })
}

pub fn load_shard(dir: &Path) -> Result<ShardSnapshot> {
    ShardSnapshot::new(ShardIndex::read(dir)?)
}

/// Atomically swappable pointer to the current snapshot. Readers never
/// block; updaters are serialized.
pub struct ShardHandle {
    current: ArcSwap<ShardSnapshot>,
    writer: Mutex<()>,
}

impl ShardHandle {
    pub fn new(snapshot: ShardSnapshot) -> Self {
        ShardHandle {
            current: ArcSwap::from_pointee(snapshot),
            writer: Mutex::new(()),
        }
    }

    pub fn load(&self) -> Arc<ShardSnapshot> {
        self.current.load_full()
    }

    /// Build the next snapshot from the current one and publish it.
    pub fn update(&self, f: impl FnOnce(&ShardSnapshot) -> Result<ShardSnapshot>) -> Result<Arc<ShardSnapshot>> {
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let next = Arc::new(f(&self.current.load())?);
        self.current.store(next.clone());
        Ok(next)
    }
}

/// A shard plus the cross bundle it scores with.
pub struct Searcher {
    handle: ShardHandle,
    cross: CrossBundle,
}

impl Searcher {
    pub fn new(snapshot: ShardSnapshot, cross: CrossBundle) -> Result<Self> {
        if let Some(v) = snapshot.version() {
            if v != cross.version.version_id {
                return Err(Error::Config(format!(
                    "shard {} holds version {v} vectors but the cross bundle is version {}",
                    snapshot.shard_id(),
                    cross.version.version_id
                )));
            }
        }
        if snapshot.base().forward.dim != cross.member_dim {
            return Err(Error::Config(format!(
                "shard vectors have dim {}, cross bundle expects {}",
                snapshot.base().forward.dim,
                cross.member_dim
            )));
        }
        Ok(Searcher {
            handle: ShardHandle::new(snapshot),
            cross,
        })
    }

    pub fn snapshot(&self) -> Arc<ShardSnapshot> {
        self.handle.load()
    }

    pub fn cross(&self) -> &CrossBundle {
        &self.cross
    }

    /// Runs entirely against the snapshot current at entry.
    pub fn search(&self, req: &SearchRequest) -> Result<HitsResponse> {
        search(&self.handle.load(), &self.cross, req)
    }

    /// Apply every member of `req` in one snapshot swap.
    pub fn update(&self, req: &UpdateRequest) -> Result<u32> {
        let updates: Vec<(MemberProfile, Option<Vec<f32>>)> = req
            .members
            .iter()
            .map(|m| {
                (
                    MemberProfile {
                        uid: m.uid,
                        fields: m.fields.clone(),
                    },
                    Some(m.vector.clone()),
                )
            })
            .collect();
        let next = self.handle.update(|s| apply_live_updates(s, &updates, req.version))?;
        Ok(next.shard_id())
    }
}
