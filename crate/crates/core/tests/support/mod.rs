#![allow(dead_code)]

//! Shared fixtures: small synthetic corpora, trained or random models, split
//! deployments, in-process and TCP services.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitrank::broker::{self, Broker, LocalShard, ShardClient};
use splitrank::embedstore::{build_from_vocab, EmbeddingDictionary};
use splitrank::frontend::{self, FieldLayout, Frontend, QueryEncoder, RemoteBackend, SearchDefaults};
use splitrank::indexer::{build_shards, compute_member_vectors, MemberProfile, QuantScheme, ShardIndex};
use splitrank::nncore::{CrossKind, CrossSpec, Activation, InitConfig, Model, TrainConfig};
use splitrank::pipeline::{build_vocabs, default_template, resolve_spec, train_model};
use splitrank::searcher::{self, Searcher, ShardSnapshot};
use splitrank::splitter::{split, CrossBundle, MemberArmBundle, ModelVersion, QueryArmBundle};
use splitrank::synth::{gen_synthetic, SyntheticConfig, SyntheticData};

pub const VERSION: u16 = 3;

pub fn small_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        n_members: 600,
        n_clusters: 4,
        skills_per_cluster: 6,
        synonym_groups_per_cluster: 3,
        titles_per_cluster: 3,
        n_companies: 40,
        queries_per_cluster: 10,
        train_examples: 2000,
        heldout_examples: 300,
        ..SyntheticConfig::default()
    }
}

pub fn small_data(seed: u64) -> SyntheticData {
    gen_synthetic(&small_config(seed)).unwrap()
}

pub fn dense_cross() -> CrossSpec {
    CrossSpec {
        kind: CrossKind::DenseCross,
        hidden_dims: vec![16, 1],
        activation: Activation::Tanh,
    }
}

/// Default architecture over the data's vocabulary with wide random weights,
/// so representations are far from degenerate without training.
pub fn random_model(data: &SyntheticData, cross: CrossKind, seed: u64) -> Model {
    let layout = FieldLayout::default();
    let vocab = build_vocabs(&layout, &data.members, &data.train);
    let mut template = default_template(&layout, 16);
    if cross == CrossKind::DenseCross {
        template.cross = dense_cross();
    }
    let spec = resolve_spec(&template, &vocab).unwrap();
    let mut model = Model::init(spec, InitConfig { seed, range: 0.3 }).unwrap();
    model.vocab = vocab;
    model
}

pub fn trained_model(data: &SyntheticData, epochs: usize) -> Model {
    let layout = FieldLayout::default();
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    train_model(&layout, &data.members, &data.train, &default_template(&layout, 16), &cfg)
        .unwrap()
        .0
}

/// Everything produced offline from one model version.
pub struct Deployment {
    pub model: Model,
    pub query: QueryArmBundle,
    pub member: MemberArmBundle,
    pub cross: CrossBundle,
    pub dict: EmbeddingDictionary,
    pub vectors: BTreeMap<u64, Vec<f32>>,
    pub members: Vec<MemberProfile>,
}

impl Deployment {
    pub fn new(model: Model, members: &[MemberProfile], version: u16) -> Self {
        let (query, member, cross) = split(&model, ModelVersion::new(version, "test").unwrap()).unwrap();
        let vectors = compute_member_vectors(&member, members, 64).unwrap();
        let dict = build_from_vocab(&query, None).unwrap();
        Deployment {
            model,
            query,
            member,
            cross,
            dict,
            vectors,
            members: members.to_vec(),
        }
    }

    pub fn shards(&self, n: u32, scheme: QuantScheme) -> Vec<ShardIndex> {
        build_shards(&self.members, &self.vectors, n, self.query.version.version_id, scheme).unwrap()
    }

    pub fn searchers(&self, n: u32, scheme: QuantScheme) -> Vec<Arc<Searcher>> {
        self.shards(n, scheme)
            .into_iter()
            .map(|s| Arc::new(Searcher::new(ShardSnapshot::new(s).unwrap(), self.cross.clone()).unwrap()))
            .collect()
    }

    pub fn encoder(&self) -> QueryEncoder {
        QueryEncoder::new(self.dict.clone(), self.query.clone()).unwrap()
    }

    /// Frontend over an in-process broker.
    pub fn local_frontend(&self, n: u32, scheme: QuantScheme, defaults: SearchDefaults) -> Frontend {
        let broker = local_broker(&self.searchers(n, scheme));
        Frontend::new(FieldLayout::default(), self.encoder(), Box::new(broker), defaults)
    }
}

pub fn local_broker(searchers: &[Arc<Searcher>]) -> Broker {
    let clients = searchers
        .iter()
        .map(|s| Arc::new(LocalShard(s.clone())) as Arc<dyn ShardClient>)
        .collect();
    Broker::new(clients, Duration::from_secs(5)).unwrap()
}

fn listener() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    (l, addr)
}

pub fn spawn_searcher(s: Arc<Searcher>) -> String {
    let (l, addr) = listener();
    std::thread::spawn(move || searcher::server::serve(l, s));
    addr
}

pub fn spawn_broker(b: Broker) -> String {
    let (l, addr) = listener();
    let b = Arc::new(b);
    std::thread::spawn(move || broker::serve(l, b));
    addr
}

pub fn spawn_frontend(f: Arc<Frontend>) -> String {
    let (l, addr) = listener();
    std::thread::spawn(move || frontend::serve(l, f));
    addr
}

/// Searchers, broker and frontend each behind their own TCP listener.
pub fn spawn_stack(dep: &Deployment, n: u32, scheme: QuantScheme, defaults: SearchDefaults) -> (String, Vec<Arc<Searcher>>) {
    let searchers = dep.searchers(n, scheme);
    let shard_addrs = searchers.iter().map(|s| spawn_searcher(s.clone())).collect();
    let broker = Broker::from_config(&broker::BrokerConfig {
        shards: shard_addrs,
        timeout_ms: 5_000,
    })
    .unwrap();
    let broker_addr = spawn_broker(broker);
    let fe = Frontend::new(
        FieldLayout::default(),
        dep.encoder(),
        Box::new(RemoteBackend::new(broker_addr, Duration::from_secs(10))),
        defaults,
    );
    (spawn_frontend(Arc::new(fe)), searchers)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn facets(pairs: &[(&str, &str)]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (k, v) in pairs {
        out.entry(k.to_string()).or_default().push(v.to_string());
    }
    out
}
