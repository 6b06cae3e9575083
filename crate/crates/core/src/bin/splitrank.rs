use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use splitrank::bench::{bench, BenchConfig};
use splitrank::broker::{self, Broker, BrokerConfig};
use splitrank::embedstore::{build_from_vocab, coverage};
use splitrank::eval::{evaluate, RunRecord};
use splitrank::frontend::{self, parse_query, FieldLayout, Frontend, FrontendConfig};
use splitrank::indexer::{build_shards, compute_member_vectors, ingest_members, write_shards, QuantScheme};
use splitrank::nncore::{pairwise_accuracy, LossKind, Model, ModelSpec, TrainConfig};
use splitrank::pipeline::{default_template, encode_examples, train_model, TrainRecord};
use splitrank::searcher::{self, load_shard, Searcher};
use splitrank::splitter::{load_bundle, save_split, split, CrossBundle, MemberArmBundle, ModelVersion, QueryArmBundle};
use splitrank::synth::{self, gen_synthetic, read_jsonl, Judgment, QueryRecord, SyntheticConfig};
use splitrank::wire::{Client, Request, Response, UserSearchRequest};

#[derive(Parser)]
#[command(name = "splitrank", version, about = "Split-inference two-tower ranking toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus, query log and judgments.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-tower model on a generated data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model spec template; vocabulary sizes of 0 are filled from the data.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 32)]
        embed_dim: usize,
        #[arg(long)]
        pointwise: bool,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the training report (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Carve a trained model into query, member and cross bundles.
    Split {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        version: u16,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute member vectors and write sharded indexes.
    BuildIndex {
        #[arg(long)]
        members: PathBuf,
        #[arg(long)]
        member_arm: PathBuf,
        #[arg(long, default_value_t = 1)]
        shards: u32,
        /// Store raw float vectors instead of int8.
        #[arg(long)]
        no_quant: bool,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the query-side token embedding dictionary.
    BuildDict {
        #[arg(long)]
        query_arm: PathBuf,
        /// Tokens kept per field, most frequent first (all when absent).
        #[arg(long)]
        top_k: Option<usize>,
        /// Query log (queries.jsonl) to report coverage against.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve one index shard over TCP.
    ServeSearcher {
        #[arg(long)]
        shard: PathBuf,
        #[arg(long)]
        cross: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7301")]
        listen: String,
    },
    /// Fan searches out to searcher shards and merge the results.
    ServeBroker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7201")]
        listen: String,
    },
    /// Encode user queries and forward them to a broker.
    ServeFrontend {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7101")]
        listen: String,
    },
    /// Send user searches to a frontend.
    Query {
        #[arg(long)]
        frontend: String,
        #[arg(long, default_value = "")]
        text: String,
        /// `name=value`, repeatable.
        #[arg(long = "facet")]
        facets: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        /// Batch mode: queries.jsonl to run; writes one run record per line.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
    /// Precision@k of a run against judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay requests at fixed concurrency and report latency percentiles.
    Bench {
        #[arg(long)]
        target: String,
        /// Newline-delimited JSON requests.
        #[arg(long)]
        requests: PathBuf,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        /// Seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long)]
        dump_samples: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{json}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn bind(listen: &str) -> Result<TcpListener> {
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    println!("{}", serde_json::json!({ "listening": listener.local_addr()?.to_string() }));
    std::io::stdout().flush()?;
    Ok(listener)
}

fn parse_facets(raw: &[String]) -> Result<BTreeMap<String, Vec<String>>> {
    let mut facets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in raw {
        let Some((name, value)) = f.split_once('=') else {
            bail!("facet {f:?} is not name=value");
        };
        facets.entry(name.to_string()).or_default().push(value.to_string());
    }
    Ok(facets)
}

fn user_search(client: &Client, req: UserSearchRequest, timeout: Duration) -> Result<splitrank::wire::ResultsResponse> {
    match client.call(&Request::UserSearch(req), timeout)? {
        Response::Results(r) => Ok(r),
        other => Err(other.into_error().into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out } => {
            let cfg: SyntheticConfig = match config {
                Some(p) => serde_json::from_slice(&fs::read(&p)?).with_context(|| format!("reading {}", p.display()))?,
                None => SyntheticConfig::default(),
            };
            let data = gen_synthetic(&cfg)?;
            data.write(&out)?;
            emit(
                &serde_json::json!({
                    "members": data.members.len(),
                    "queries": data.queries.len(),
                    "train": data.train.len(),
                    "heldout": data.heldout.len(),
                    "out": out,
                }),
                None,
            )
        }
        Cmd::Train { data, spec, seed, epochs, lr, batch_size, embed_dim, pointwise, out, report } => {
            let layout = FieldLayout::default();
            let members = ingest_members(&data.join(synth::CORPUS_FILE))?;
            let records: Vec<TrainRecord> = read_jsonl(&data.join(synth::TRAIN_FILE))?;
            let template: ModelSpec = match spec {
                Some(p) => serde_json::from_slice(&fs::read(&p)?).with_context(|| format!("reading {}", p.display()))?,
                None => default_template(&layout, embed_dim),
            };
            let cfg = TrainConfig {
                lr,
                epochs,
                seed,
                batch_size,
                loss: if pointwise { LossKind::Pointwise } else { LossKind::Pairwise },
                ..TrainConfig::default()
            };
            let (model, rep) = train_model(&layout, &members, &records, &template, &cfg)?;
            model.save(&out, &format!("seed{seed}"))?;
            let heldout_path = data.join(synth::HELDOUT_FILE);
            let heldout_accuracy = if heldout_path.exists() {
                let held: Vec<TrainRecord> = read_jsonl(&heldout_path)?;
                Some(pairwise_accuracy(&model, &encode_examples(&model, &layout, &members, &held)?)?)
            } else {
                None
            };
            emit(
                &serde_json::json!({
                    "epoch_loss": rep.epoch_loss,
                    "epoch_margin_fraction": rep.epoch_margin_fraction,
                    "heldout_accuracy": heldout_accuracy,
                    "out": out,
                }),
                report.as_deref(),
            )
        }
        Cmd::Split { model, version, label, out } => {
            let (m, saved_label) = Model::load(&model)?;
            let v = ModelVersion::new(version, label.unwrap_or(saved_label))?;
            let (q, mem, c) = split(&m, v)?;
            save_split(&out, &q, &mem, &c)?;
            emit(&serde_json::json!({ "version": version, "out": out }), None)
        }
        Cmd::BuildIndex { members, member_arm, shards, no_quant, batch_size, out } => {
            let profiles = ingest_members(&members)?;
            let bundle: MemberArmBundle = load_bundle(&member_arm)?;
            let vectors = compute_member_vectors(&bundle, &profiles, batch_size)?;
            let scheme = if no_quant { QuantScheme::None } else { QuantScheme::Int8 };
            let built = build_shards(&profiles, &vectors, shards, bundle.version.version_id, scheme)?;
            write_shards(&out, &built)?;
            let sizes: Vec<usize> = built.iter().map(|s| s.forward.len()).collect();
            emit(&serde_json::json!({ "members": profiles.len(), "shard_sizes": sizes, "out": out }), None)
        }
        Cmd::BuildDict { query_arm, top_k, log, out } => {
            let bundle: QueryArmBundle = load_bundle(&query_arm)?;
            let dict = build_from_vocab(&bundle, top_k)?;
            dict.save(&out)?;
            let cov = match log {
                Some(p) => {
                    let layout = FieldLayout::default();
                    let qs: Vec<QueryRecord> = read_jsonl(&p)?;
                    let feats: Vec<_> = qs.iter().map(|q| parse_query(&layout, &q.text, &q.facets)).collect();
                    Some(coverage(&dict, &feats)?)
                }
                None => None,
            };
            emit(
                &serde_json::json!({
                    "entries": dict.len(),
                    "bytes": dict.serialized_size(),
                    "coverage": cov,
                    "out": out,
                }),
                None,
            )
        }
        Cmd::ServeSearcher { shard, cross, listen } => {
            let snapshot = load_shard(&shard)?;
            let cross: CrossBundle = load_bundle(&cross)?;
            let s = Arc::new(Searcher::new(snapshot, cross)?);
            searcher::server::serve(bind(&listen)?, s)?;
            Ok(())
        }
        Cmd::ServeBroker { config, listen } => {
            let b = Arc::new(Broker::from_config(&BrokerConfig::load(&config)?)?);
            broker::serve(bind(&listen)?, b)?;
            Ok(())
        }
        Cmd::ServeFrontend { config, listen } => {
            let f = Arc::new(Frontend::from_config(&FrontendConfig::load(&config)?)?);
            frontend::serve(bind(&listen)?, f)?;
            Ok(())
        }
        Cmd::Query { frontend, text, facets, k, queries, out, timeout_ms } => {
            let client = Client::new(frontend);
            let timeout = Duration::from_millis(timeout_ms);
            match queries {
                Some(path) => {
                    let qs: Vec<QueryRecord> = read_jsonl(&path)?;
                    let mut lines = String::new();
                    for q in qs {
                        let req = UserSearchRequest { text: q.text, facets: q.facets, k };
                        let r = user_search(&client, req, timeout)?;
                        lines.push_str(&serde_json::to_string(&RunRecord { qid: q.qid, hits: r.hits })?);
                        lines.push('\n');
                    }
                    match out {
                        Some(p) => fs::write(&p, lines)?,
                        None => print!("{lines}"),
                    }
                    Ok(())
                }
                None => {
                    let req = UserSearchRequest { text, facets: parse_facets(&facets)?, k };
                    emit(&user_search(&client, req, timeout)?, out.as_deref())
                }
            }
        }
        Cmd::Eval { run, judgments, k, out } => {
            let run: Vec<RunRecord> = read_jsonl(&run)?;
            let judgments: Vec<Judgment> = read_jsonl(&judgments)?;
            emit(&evaluate(&run, &judgments, k)?, out.as_deref())
        }
        Cmd::Bench { target, requests, concurrency, duration, dump_samples, out } => {
            let reqs: Vec<Request> = read_jsonl(&requests)?;
            let cfg = BenchConfig {
                concurrency,
                duration: Duration::from_secs_f64(duration),
                keep_samples: dump_samples,
                ..BenchConfig::default()
            };
            emit(&bench(&target, &reqs, &cfg, None)?, out.as_deref())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
