//! Nearest-rank latency percentiles.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::wire::RequestTrace;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

/// Value at rank `ceil(p/100 * n)` of the sorted samples; `None` when empty.
pub fn nearest_rank(sorted: &[u64], p: u32) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (p as u64 * n).div_ceil(100).max(1);
    Some(sorted[(rank - 1) as usize])
}

/// p50/p90/p99 of `samples` (sorted in place); `None` when empty.
pub fn percentiles(samples: &mut [u64]) -> Option<Percentiles> {
    samples.sort_unstable();
    Some(Percentiles {
        p50: nearest_rank(samples, 50)?,
        p90: nearest_rank(samples, 90)?,
        p99: nearest_rank(samples, 99)?,
    })
}

/// Per-phase percentiles in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub count: usize,
    pub parse_us: Percentiles,
    pub qarm_us: Percentiles,
    pub backend_us: Percentiles,
    pub total_us: Percentiles,
}

/// Percentiles over a window of request traces; `None` when empty.
pub fn record_latency(traces: &[RequestTrace]) -> Option<PhaseReport> {
    let phase = |f: fn(&RequestTrace) -> u64| percentiles(&mut traces.iter().map(f).collect::<Vec<_>>());
    Some(PhaseReport {
        count: traces.len(),
        parse_us: phase(|t| t.parse_us)?,
        qarm_us: phase(|t| t.qarm_us)?,
        backend_us: phase(|t| t.backend_us)?,
        total_us: phase(|t| t.total_us)?,
    })
}

/// Thread-safe trace accumulator.
#[derive(Debug, Default)]
pub struct LatencyRecorder {
    traces: Mutex<Vec<RequestTrace>>,
}

impl LatencyRecorder {
    pub fn record(&self, trace: RequestTrace) {
        self.traces.lock().unwrap_or_else(|p| p.into_inner()).push(trace);
    }

    pub fn traces(&self) -> Vec<RequestTrace> {
        self.traces.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn report(&self) -> Option<PhaseReport> {
        record_latency(&self.traces.lock().unwrap_or_else(|p| p.into_inner()))
    }

    pub fn clear(&self) {
        self.traces.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }
}
