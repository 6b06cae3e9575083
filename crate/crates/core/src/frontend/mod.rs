//! Online query processing: parse, evaluate the query arm once from the
//! embedding dictionary, attach the representation to the backend request,
//! record latency.

mod parse;

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use parse::{parse_query, text_trigrams, word_trigrams, words, FieldLayout, QueryFeatures};

use crate::broker::Broker;
use crate::embedstore::EmbeddingDictionary;
use crate::error::{Error, Result};
use crate::latency::LatencyRecorder;
use crate::nncore::pool_rows;
use crate::splitter::{load_bundle, QueryArmBundle};
use crate::wire::{
    serve_forever, Client, HitsResponse, Request, RequestTrace, Response, ResultsResponse,
    RetrieveMode, SearchRequest,
};

/// Pool the dictionary vectors of every resolvable query token per arm
/// field and run the query-arm dense stack. Returns the representation and
/// the number of tokens the dictionary could not resolve.
pub fn build_query_representation(
    dict: &EmbeddingDictionary,
    bundle: &QueryArmBundle,
    features: &QueryFeatures,
) -> Result<(Vec<f32>, usize)> {
    if dict.version_id != bundle.version.version_id {
        return Err(Error::Config(format!(
            "dictionary version {} does not match query arm version {}",
            dict.version_id, bundle.version.version_id
        )));
    }
    let spec = &bundle.spec;
    let tokens = features.arm_tokens();
    let mut agg = vec![0f32; spec.input_width()];
    let mut misses = 0;
    let mut offset = 0;
    for f in &spec.fields {
        let slot = &mut agg[offset..offset + f.embed_dim];
        offset += f.embed_dim;
        let Some(ts) = tokens.get(&f.field_id) else {
            continue;
        };
        let mut rows = Vec::with_capacity(ts.len());
        for t in ts {
            match dict.lookup(f.field_id, t) {
                Some(r) if r.len() == f.embed_dim => rows.push(r),
                Some(r) => {
                    return Err(Error::Config(format!(
                        "dictionary field {} has dim {}, query arm expects {}",
                        f.field_id,
                        r.len(),
                        f.embed_dim
                    )))
                }
                None => misses += 1,
            }
        }
        pool_rows(rows, f.pooling, slot);
    }
    Ok((bundle.weights.dense_forward(spec, &agg), misses))
}

/// Dictionary plus query-arm bundle, checked for consistency once.
pub struct QueryEncoder {
    dict: EmbeddingDictionary,
    bundle: QueryArmBundle,
    evaluations: AtomicU64,
}

impl QueryEncoder {
    pub fn new(dict: EmbeddingDictionary, bundle: QueryArmBundle) -> Result<Self> {
        if dict.version_id != bundle.version.version_id {
            return Err(Error::Config(format!(
                "dictionary version {} does not match query arm version {}",
                dict.version_id, bundle.version.version_id
            )));
        }
        for f in &bundle.spec.fields {
            if let Some(d) = dict.fields.get(&f.field_id) {
                if d.embed_dim != f.embed_dim {
                    return Err(Error::Config(format!(
                        "dictionary field {} has dim {}, query arm expects {}",
                        f.field_id, d.embed_dim, f.embed_dim
                    )));
                }
            }
        }
        Ok(QueryEncoder {
            dict,
            bundle,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn load(dict_path: &Path, bundle_dir: &Path) -> Result<Self> {
        QueryEncoder::new(EmbeddingDictionary::load(dict_path)?, load_bundle(bundle_dir)?)
    }

    pub fn version(&self) -> u16 {
        self.bundle.version.version_id
    }

    pub fn dim(&self) -> usize {
        self.bundle.spec.output_dim()
    }

    pub fn dictionary(&self) -> &EmbeddingDictionary {
        &self.dict
    }

    pub fn bundle(&self) -> &QueryArmBundle {
        &self.bundle
    }

    pub fn encode(&self, features: &QueryFeatures) -> Result<(Vec<f32>, usize)> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        build_query_representation(&self.dict, &self.bundle, features)
    }

    /// Number of query-arm evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}

/// Where the frontend sends backend requests.
pub trait Backend: Send + Sync {
    fn search(&self, req: &SearchRequest) -> Result<HitsResponse>;
}

impl Backend for Broker {
    fn search(&self, req: &SearchRequest) -> Result<HitsResponse> {
        Broker::search(self, req)
    }
}

/// A broker reached over TCP.
pub struct RemoteBackend {
    client: Client,
    timeout: Duration,
}

impl RemoteBackend {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        RemoteBackend {
            client: Client::new(addr),
            timeout,
        }
    }
}

impl Backend for RemoteBackend {
    fn search(&self, req: &SearchRequest) -> Result<HitsResponse> {
        self.client.search(req, self.timeout)
    }
}

fn default_k() -> usize {
    10
}

fn default_max_candidates() -> usize {
    100_000
}

fn default_backend_timeout_ms() -> u64 {
    5_000
}

/// Request defaults applied by the frontend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDefaults {
    pub w_sem: f32,
    pub w_term: f32,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: RetrieveMode,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
}

impl Default for SearchDefaults {
    fn default() -> Self {
        SearchDefaults {
            w_sem: 1.0,
            w_term: 1.0,
            k: default_k(),
            mode: RetrieveMode::Any,
            max_candidates: default_max_candidates(),
        }
    }
}

/// Startup configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub dict: PathBuf,
    pub query_arm: PathBuf,
    pub broker: String,
    #[serde(flatten)]
    pub defaults: SearchDefaults,
    #[serde(default = "default_backend_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub layout: FieldLayout,
}

impl FrontendConfig {
    /// Relative paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: FrontendConfig = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dict = base.join(&cfg.dict);
        cfg.query_arm = base.join(&cfg.query_arm);
        Ok(cfg)
    }
}

pub struct Frontend {
    layout: FieldLayout,
    encoder: QueryEncoder,
    backend: Box<dyn Backend>,
    defaults: SearchDefaults,
    latency: LatencyRecorder,
}

impl Frontend {
    pub fn new(
        layout: FieldLayout,
        encoder: QueryEncoder,
        backend: Box<dyn Backend>,
        defaults: SearchDefaults,
    ) -> Self {
        Frontend {
            layout,
            encoder,
            backend,
            defaults,
            latency: LatencyRecorder::default(),
        }
    }

    pub fn from_config(cfg: &FrontendConfig) -> Result<Self> {
        let encoder = QueryEncoder::load(&cfg.dict, &cfg.query_arm)?;
        let backend = RemoteBackend::new(cfg.broker.clone(), Duration::from_millis(cfg.timeout_ms));
        Ok(Frontend::new(cfg.layout.clone(), encoder, Box::new(backend), cfg.defaults.clone()))
    }

    pub fn encoder(&self) -> &QueryEncoder {
        &self.encoder
    }

    pub fn latency(&self) -> &LatencyRecorder {
        &self.latency
    }

    pub fn defaults(&self) -> &SearchDefaults {
        &self.defaults
    }

    /// Parse, encode once, query the backend.
    pub fn handle_search(
        &self,
        raw_text: &str,
        facets: &BTreeMap<String, Vec<String>>,
        k: Option<usize>,
    ) -> Result<ResultsResponse> {
        let t0 = Instant::now();
        let features = parse_query(&self.layout, raw_text, facets);
        let t1 = Instant::now();
        let (qrep, misses) = self.encoder.encode(&features)?;
        let t2 = Instant::now();
        let req = SearchRequest {
            version: self.encoder.version(),
            qrep,
            terms: features.terms(&self.layout),
            mode: self.defaults.mode,
            max_candidates: self.defaults.max_candidates,
            k: k.unwrap_or(self.defaults.k),
            w_sem: self.defaults.w_sem,
            w_term: self.defaults.w_term,
            shards: None,
        };
        let resp = self.backend.search(&req)?;
        let t3 = Instant::now();
        let trace = RequestTrace {
            parse_us: (t1 - t0).as_micros() as u64,
            qarm_us: (t2 - t1).as_micros() as u64,
            backend_us: (t3 - t2).as_micros() as u64,
            total_us: (t3 - t0).as_micros() as u64,
        };
        self.latency.record(trace);
        Ok(ResultsResponse {
            hits: resp.hits,
            trace,
            degraded: resp.degraded,
            misses,
        })
    }

    pub fn handle(&self, req: Request) -> Response {
        match req {
            Request::UserSearch(r) => self
                .handle_search(&r.text, &r.facets, r.k)
                .map(Response::Results)
                .unwrap_or_else(|e| Response::error(&e)),
            _ => Response::error(&Error::input("frontends only accept user_search requests")),
        }
    }
}

pub fn serve(listener: TcpListener, frontend: Arc<Frontend>) -> Result<()> {
    serve_forever(listener, Arc::new(move |req| frontend.handle(req)))
}
