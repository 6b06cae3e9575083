//! Closed-loop load generator: replays requests at fixed concurrency for a
//! fixed duration and reports nearest-rank latency percentiles.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{percentiles, Percentiles};
use crate::wire::{Connection, Request, Response};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub concurrency: usize,
    pub duration: Duration,
    /// Per-request socket timeout.
    pub timeout: Duration,
    /// Keep every client-side latency sample in the report.
    pub keep_samples: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            concurrency: 1,
            duration: Duration::from_secs(10),
            timeout: Duration::from_secs(5),
            keep_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: usize,
    pub errors: usize,
    pub elapsed_s: f64,
    pub throughput_rps: f64,
    /// Round-trip latency seen by the client, in microseconds.
    pub client_us: Percentiles,
    /// Server-reported phase timings in microseconds, keyed by phase name.
    pub phases: BTreeMap<String, Percentiles>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_us: Vec<u64>,
}

#[derive(Default)]
struct Samples {
    client: Vec<u64>,
    phases: BTreeMap<&'static str, Vec<u64>>,
    errors: usize,
}

impl Samples {
    fn add_phases(&mut self, resp: &Response) {
        let mut put = |k: &'static str, v: u64| self.phases.entry(k).or_default().push(v);
        match resp {
            Response::Results(r) => {
                put("parse_us", r.trace.parse_us);
                put("qarm_us", r.trace.qarm_us);
                put("backend_us", r.trace.backend_us);
                put("total_us", r.trace.total_us);
            }
            Response::Hits(h) => {
                put("retrieve_us", h.timing.retrieve_us);
                put("score_us", h.timing.score_us);
            }
            _ => {}
        }
    }

    fn merge(&mut self, other: Samples) {
        self.client.extend(other.client);
        self.errors += other.errors;
        for (k, v) in other.phases {
            self.phases.entry(k).or_default().extend(v);
        }
    }
}

/// Run `requests` round-robin against `target` from `cfg.concurrency`
/// connections. `on_response` sees every response (for validation). Error
/// responses and transport failures are counted, not fatal; an unreachable
/// target is an error.
pub fn bench(
    target: &str,
    requests: &[Request],
    cfg: &BenchConfig,
    on_response: Option<&(dyn Fn(&Request, &Response) + Sync)>,
) -> Result<BenchReport> {
    if requests.is_empty() {
        return Err(Error::input("no requests to replay"));
    }
    if cfg.concurrency == 0 {
        return Err(Error::input("concurrency must be >= 1"));
    }
    let conns = (0..cfg.concurrency)
        .map(|_| Connection::connect(target, Some(cfg.timeout)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Backend(format!("cannot reach {target}: {e}")))?;
    let all = Mutex::new(Samples::default());
    let start = Instant::now();
    let deadline = start + cfg.duration;
    std::thread::scope(|s| {
        for (w, mut conn) in conns.into_iter().enumerate() {
            let all = &all;
            s.spawn(move || {
                let mut mine = Samples::default();
                let mut i = w;
                while Instant::now() < deadline {
                    let req = &requests[i % requests.len()];
                    i += 1;
                    let t0 = Instant::now();
                    match conn.call(req) {
                        Ok(resp) => {
                            mine.client.push(t0.elapsed().as_micros() as u64);
                            if let Some(f) = on_response {
                                f(req, &resp);
                            }
                            if matches!(resp, Response::Error(_)) {
                                mine.errors += 1;
                            } else {
                                mine.add_phases(&resp);
                            }
                        }
                        Err(e) => {
                            log::warn!("bench request failed: {e}");
                            mine.errors += 1;
                            match Connection::connect(target, Some(cfg.timeout)) {
                                Ok(c) => conn = c,
                                Err(_) => break,
                            }
                        }
                    }
                }
                all.lock().unwrap_or_else(|p| p.into_inner()).merge(mine);
            });
        }
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut samples = all.into_inner().unwrap_or_else(|p| p.into_inner());
    let n = samples.client.len();
    let client_us = percentiles(&mut samples.client).unwrap_or_default();
    let phases = samples
        .phases
        .into_iter()
        .filter_map(|(k, mut v)| Some((k.to_string(), percentiles(&mut v)?)))
        .collect();
    Ok(BenchReport {
        samples: n,
        errors: samples.errors,
        elapsed_s: elapsed,
        throughput_rps: n as f64 / elapsed.max(f64::EPSILON),
        client_us,
        phases,
        samples_us: if cfg.keep_samples { samples.client } else { Vec::new() },
    })
}
