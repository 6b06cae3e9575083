//! Scatter-gather tier: fan a search out to every shard, merge the per-shard
//! top-k lists into a global top-k. Shard ids are positions in the
//! configured shard list, which must match the index's `uid mod N` layout.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexer::shard_of;
use crate::searcher::Searcher;
use crate::wire::{
    serve_forever, Client, HitsResponse, MemberUpdate, Request, Response, SearchHit, SearchRequest,
    SearchTiming, UpdateRequest,
};

pub const DEFAULT_TIMEOUT_MS: u64 = 500;

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerConfig {
    /// Searcher endpoints (`host:port`), indexed by shard id.
    pub shards: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl BrokerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: BrokerConfig = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.shards.is_empty() {
            return Err(Error::Config(format!("{}: no shards configured", path.display())));
        }
        Ok(cfg)
    }
}

/// One searcher as seen from the broker.
pub trait ShardClient: Send + Sync {
    fn search(&self, req: &SearchRequest, timeout: Duration) -> Result<HitsResponse>;
    /// Returns the shards that applied the update.
    fn update(&self, req: &UpdateRequest, timeout: Duration) -> Result<Vec<u32>>;
}

/// In-process searcher.
pub struct LocalShard(pub Arc<Searcher>);

impl ShardClient for LocalShard {
    fn search(&self, req: &SearchRequest, _timeout: Duration) -> Result<HitsResponse> {
        self.0.search(req)
    }

    fn update(&self, req: &UpdateRequest, _timeout: Duration) -> Result<Vec<u32>> {
        Ok(vec![self.0.update(req)?])
    }
}

impl ShardClient for Client {
    fn search(&self, req: &SearchRequest, timeout: Duration) -> Result<HitsResponse> {
        Client::search(self, req, timeout)
    }

    fn update(&self, req: &UpdateRequest, timeout: Duration) -> Result<Vec<u32>> {
        Client::update(self, req, timeout)
    }
}

#[derive(Debug)]
pub struct FanOut {
    /// Successful responses, ordered by shard id.
    pub responses: Vec<(u32, HitsResponse)>,
    /// Shards that failed or missed the deadline, ordered by shard id.
    pub failed: Vec<(u32, Error)>,
}

/// Send `req` to every listed shard concurrently and wait at most `timeout`.
/// Fails only when no shard answers.
pub fn fan_out(
    req: &SearchRequest,
    shards: &[(u32, Arc<dyn ShardClient>)],
    timeout: Duration,
) -> Result<FanOut> {
    if shards.is_empty() {
        return Err(Error::Config("no shards to query".into()));
    }
    let deadline = Instant::now() + timeout;
    let req = Arc::new(req.clone());
    let (tx, rx) = mpsc::channel();
    for (id, client) in shards {
        let (id, client, req, tx) = (*id, client.clone(), req.clone(), tx.clone());
        std::thread::spawn(move || {
            let _ = tx.send((id, client.search(&req, timeout)));
        });
    }
    drop(tx);
    let mut pending: Vec<u32> = shards.iter().map(|(id, _)| *id).collect();
    let mut responses = Vec::new();
    let mut failed = Vec::new();
    while !pending.is_empty() {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok((id, result)) => {
                pending.retain(|&p| p != id);
                match result {
                    Ok(r) => responses.push((id, r)),
                    Err(e) => failed.push((id, e)),
                }
            }
            Err(_) => break,
        }
    }
    failed.extend(
        pending
            .into_iter()
            .map(|id| (id, Error::Backend(format!("shard {id} timed out after {timeout:?}")))),
    );
    responses.sort_by_key(|(id, _)| *id);
    failed.sort_by_key(|(id, _)| *id);
    if responses.is_empty() {
        return Err(all_failed(failed));
    }
    Ok(FanOut { responses, failed })
}

/// A version error shared by every shard is reported as such; anything else
/// becomes one backend error listing each shard's failure.
fn all_failed(failed: Vec<(u32, Error)>) -> Error {
    let versions: Vec<(u16, u16)> = failed
        .iter()
        .filter_map(|(_, e)| match e {
            Error::Version { expected, found } => Some((*expected, *found)),
            _ => None,
        })
        .collect();
    if versions.len() == failed.len() && versions.windows(2).all(|w| w[0] == w[1]) {
        let (expected, found) = versions[0];
        return Error::Version { expected, found };
    }
    let detail: Vec<String> = failed.iter().map(|(id, e)| format!("shard {id}: {e}")).collect();
    Error::Backend(format!("all shards failed: {}", detail.join("; ")))
}

struct Head<'a> {
    hit: &'a SearchHit,
    list: usize,
    pos: usize,
}

impl PartialEq for Head<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head<'_> {}

impl PartialOrd for Head<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Head<'_> {
    /// Max-heap order: the best-ranked hit is the greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.hit.rank_cmp(self.hit).then(other.list.cmp(&self.list))
    }
}

/// k-way merge of rank-sorted lists by (score desc, uid asc).
pub fn merge<L: AsRef<[SearchHit]>>(lists: &[L], k: usize) -> Vec<SearchHit> {
    let mut heap: BinaryHeap<Head<'_>> = lists
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().first().map(|hit| Head { hit, list: i, pos: 0 }))
        .collect();
    let mut out = Vec::with_capacity(k.min(lists.iter().map(|l| l.as_ref().len()).sum()));
    while out.len() < k {
        let Some(Head { hit, list, pos }) = heap.pop() else {
            break;
        };
        out.push(*hit);
        if let Some(next) = lists[list].as_ref().get(pos + 1) {
            heap.push(Head {
                hit: next,
                list,
                pos: pos + 1,
            });
        }
    }
    out
}

pub struct Broker {
    shards: Vec<Arc<dyn ShardClient>>,
    timeout: Duration,
}

impl Broker {
    pub fn new(shards: Vec<Arc<dyn ShardClient>>, timeout: Duration) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Config("broker needs at least one shard".into()));
        }
        Ok(Broker { shards, timeout })
    }

    pub fn from_config(cfg: &BrokerConfig) -> Result<Self> {
        let shards = cfg
            .shards
            .iter()
            .map(|a| Arc::new(Client::new(a.clone())) as Arc<dyn ShardClient>)
            .collect();
        Broker::new(shards, Duration::from_millis(cfg.timeout_ms))
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    /// Global top-k; `degraded` lists shards that did not answer.
    pub fn search(&self, req: &SearchRequest) -> Result<HitsResponse> {
        let targets: Vec<(u32, Arc<dyn ShardClient>)> = match &req.shards {
            None => self
                .shards
                .iter()
                .enumerate()
                .map(|(i, c)| (i as u32, c.clone()))
                .collect(),
            Some(ids) => ids
                .iter()
                .map(|&id| {
                    self.shards
                        .get(id as usize)
                        .map(|c| (id, c.clone()))
                        .ok_or_else(|| Error::input(format!("unknown shard id {id}")))
                })
                .collect::<Result<_>>()?,
        };
        let mut shard_req = req.clone();
        shard_req.shards = None;
        let out = fan_out(&shard_req, &targets, self.timeout)?;
        for (id, e) in &out.failed {
            log::warn!("shard {id} failed: {e}");
        }
        let lists: Vec<&[SearchHit]> = out.responses.iter().map(|(_, r)| r.hits.as_slice()).collect();
        let timing = out.responses.iter().fold(SearchTiming::default(), |t, (_, r)| SearchTiming {
            retrieve_us: t.retrieve_us.max(r.timing.retrieve_us),
            score_us: t.score_us.max(r.timing.score_us),
        });
        Ok(HitsResponse {
            shard_id: None,
            hits: merge(&lists, req.k),
            timing,
            degraded: out.failed.iter().map(|(id, _)| *id).collect(),
        })
    }

    /// Split a live update by owning shard and forward each part. Members of
    /// one shard are applied atomically; shards are updated one after another.
    pub fn update(&self, req: &UpdateRequest) -> Result<Vec<u32>> {
        let mut parts: BTreeMap<u32, Vec<MemberUpdate>> = BTreeMap::new();
        for m in &req.members {
            parts
                .entry(shard_of(m.uid, self.shards.len() as u32))
                .or_default()
                .push(m.clone());
        }
        let mut applied = Vec::with_capacity(parts.len());
        for (id, members) in parts {
            let part = UpdateRequest {
                version: req.version,
                members,
            };
            self.shards[id as usize].update(&part, self.timeout)?;
            applied.push(id);
        }
        Ok(applied)
    }

    pub fn handle(&self, req: Request) -> Response {
        let result = match req {
            Request::Search(r) => self.search(&r).map(Response::Hits),
            Request::Update(u) => self.update(&u).map(|shards| Response::Updated {
                count: u.members.len(),
                shards,
            }),
            Request::UserSearch(_) => Err(Error::input("brokers only accept search and update requests")),
        };
        result.unwrap_or_else(|e| Response::error(&e))
    }
}

pub fn serve(listener: TcpListener, broker: Arc<Broker>) -> Result<()> {
    serve_forever(listener, Arc::new(move |req| broker.handle(req)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(uid: u64, score: f32) -> SearchHit {
        SearchHit {
            uid,
            score,
            semantic: score,
            term_match: 0.0,
        }
    }

    #[test]
    fn merge_ties_prefer_lower_uid() {
        let a = vec![hit(4, 1.0), hit(2, 0.5)];
        let b = vec![hit(3, 1.0), hit(1, 0.2)];
        let m = merge(&[a, b], 3);
        assert_eq!(m.iter().map(|h| h.uid).collect::<Vec<_>>(), [3, 4, 2]);
    }

    #[test]
    fn merge_of_nothing() {
        assert!(merge::<Vec<SearchHit>>(&[], 5).is_empty());
        assert!(merge(&[vec![hit(1, 1.0)]], 0).is_empty());
    }
}
