mod support;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::Duration;

use splitrank::bench::{bench, BenchConfig};
use splitrank::latency::percentiles;
use splitrank::wire::{HitsResponse, Request, Response, RetrieveMode, SearchRequest, SearchTiming};

/// Newline-JSON server that sleeps `delay` before answering every request.
fn sleepy_server(delay: Duration) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let reply = serde_json::to_string(&Response::Hits(HitsResponse {
        shard_id: Some(0),
        hits: vec![],
        timing: SearchTiming { retrieve_us: 3, score_us: 4 },
        degraded: vec![],
    }))
    .unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            stream.set_nodelay(true).unwrap();
            let reply = reply.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                while reader.read_line(&mut line).unwrap_or(0) > 0 {
                    std::thread::sleep(delay);
                    if writeln!(stream, "{reply}").is_err() {
                        return;
                    }
                    line.clear();
                }
            });
        }
    });
    addr
}

fn request() -> Request {
    Request::Search(SearchRequest {
        version: 1,
        qrep: vec![0.0; 4],
        terms: vec![],
        mode: RetrieveMode::Any,
        max_candidates: 1,
        k: 1,
        w_sem: 1.0,
        w_term: 1.0,
        shards: None,
    })
}

fn cfg(secs: f64) -> BenchConfig {
    BenchConfig { concurrency: 1, duration: Duration::from_secs_f64(secs), keep_samples: true, ..BenchConfig::default() }
}

#[test]
fn one_millisecond_server_measures_about_one_millisecond() {
    let addr = sleepy_server(Duration::from_millis(1));
    let rep = bench(&addr, &[request()], &cfg(1.0), None).unwrap();
    assert_eq!(rep.errors, 0);
    assert!(rep.samples > 100);
    assert!((500..=2_000).contains(&rep.client_us.p50), "{:?}", rep.client_us);
    assert!((500..=2_000).contains(&rep.client_us.p99), "{:?}", rep.client_us);
    assert_eq!(rep.phases["retrieve_us"].p99, 3);
    assert_eq!(rep.phases["score_us"].p50, 4);
}

#[test]
fn doubling_duration_doubles_samples() {
    let addr = sleepy_server(Duration::from_millis(2));
    let short = bench(&addr, &[request()], &cfg(1.0), None).unwrap();
    let long = bench(&addr, &[request()], &cfg(2.0), None).unwrap();
    let ratio = long.samples as f64 / short.samples as f64;
    assert!((1.8..=2.2).contains(&ratio), "{} vs {}", long.samples, short.samples);
}

#[test]
fn report_percentiles_match_the_raw_samples() {
    let addr = sleepy_server(Duration::from_micros(200));
    let c = BenchConfig { concurrency: 3, ..cfg(0.5) };
    let rep = bench(&addr, &[request(), request()], &c, None).unwrap();
    assert_eq!(rep.samples_us.len(), rep.samples);
    let mut sorted = rep.samples_us.clone();
    sorted.sort();
    let n = sorted.len();
    let at = |p: usize| sorted[(p * n).div_ceil(100).max(1) - 1];
    assert_eq!((rep.client_us.p50, rep.client_us.p90, rep.client_us.p99), (at(50), at(90), at(99)));
    assert_eq!(percentiles(&mut sorted).unwrap(), rep.client_us);
    assert!((rep.throughput_rps - rep.samples as f64 / rep.elapsed_s).abs() < 1e-6);
}

#[test]
fn every_response_is_observed() {
    let addr = sleepy_server(Duration::ZERO);
    let seen = std::sync::atomic::AtomicUsize::new(0);
    let check = |_: &Request, resp: &Response| {
        assert!(matches!(resp, Response::Hits(_)));
        seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    };
    let rep = bench(&addr, &[request()], &BenchConfig { concurrency: 2, ..cfg(0.3) }, Some(&check)).unwrap();
    assert_eq!(seen.into_inner(), rep.samples);
}

#[test]
fn unreachable_target_and_empty_input_are_errors() {
    let free = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    assert!(bench(&free, &[request()], &cfg(0.2), None).is_err());
    let addr = sleepy_server(Duration::ZERO);
    assert!(bench(&addr, &[], &cfg(0.2), None).is_err());
    assert!(bench(&addr, &[request()], &BenchConfig { concurrency: 0, ..cfg(0.2) }, None).is_err());
}
