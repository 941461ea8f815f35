//! Consumer-side timeliness counters.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::stats::Distribution;

/// Produced / consumed counters shared between the producer and consumer.
#[derive(Debug, Default)]
pub struct Counters {
    produced: AtomicU64,
    consumed: AtomicU64,
}

impl Counters {
    pub fn new() -> Arc<Self> {
        Arc::new(Counters::default())
    }

    pub fn produced(&self) -> u64 {
        self.produced.load(Ordering::SeqCst)
    }

    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::SeqCst)
    }

    pub(crate) fn mark_produced(&self) {
        self.produced.fetch_add(1, Ordering::SeqCst);
    }

    /// Marks one record consumed and returns the lag left behind it.
    pub(crate) fn mark_consumed(&self) -> u64 {
        let consumed = self.consumed.fetch_add(1, Ordering::SeqCst) + 1;
        self.produced().saturating_sub(consumed)
    }
}

/// Collects per-record lag samples and per-window consumption counts.
#[derive(Debug, Clone)]
pub struct MetricsRecorder {
    window: Duration,
    start: Option<Instant>,
    last: Option<Instant>,
    lag: Vec<f64>,
    windows: Vec<u64>,
}

impl Default for MetricsRecorder {
    fn default() -> Self {
        MetricsRecorder::new(Duration::from_secs(1))
    }
}

impl MetricsRecorder {
    pub fn new(window: Duration) -> Self {
        MetricsRecorder { window, start: None, last: None, lag: Vec::new(), windows: Vec::new() }
    }

    pub fn record(&mut self, now: Instant, lag: u64) {
        let start = *self.start.get_or_insert(now);
        let idx = (now.duration_since(start).as_nanos() / self.window.as_nanos().max(1)) as usize;
        if self.windows.len() <= idx {
            self.windows.resize(idx + 1, 0);
        }
        self.windows[idx] += 1;
        self.last = Some(now);
        self.lag.push(lag as f64);
    }

    pub fn finish(&self) -> ConsumerMetrics {
        let records = self.lag.len() as u64;
        if records == 0 {
            return ConsumerMetrics::empty();
        }
        let elapsed = match (self.start, self.last) {
            (Some(a), Some(b)) => b.duration_since(a).as_secs_f64(),
            _ => 0.0,
        };
        let w = self.window.as_secs_f64();
        // The final window is usually partial; scale it by the time it covered.
        let mut rates: Vec<f64> = self.windows.iter().map(|&n| n as f64 / w).collect();
        if let Some(last) = rates.last_mut() {
            let covered = elapsed - (self.windows.len() - 1) as f64 * w;
            if covered > 0.0 && covered < w {
                *last = *self.windows.last().unwrap() as f64 / covered.max(1e-3);
            }
        }
        let overall_rate = if elapsed > 0.0 { records as f64 / elapsed } else { records as f64 / w };
        ConsumerMetrics {
            records,
            elapsed_s: elapsed,
            overall_rate,
            final_lag: *self.lag.last().unwrap() as u64,
            record_lag: Distribution::of(&self.lag).unwrap(),
            consumption_rate: Distribution::of(&rates).unwrap(),
            window_counts: self.windows.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerMetrics {
    pub records: u64,
    /// Seconds between the first and the last consumed record.
    pub elapsed_s: f64,
    /// Records per second over the whole run.
    pub overall_rate: f64,
    /// Lag left after the last consumed record.
    pub final_lag: u64,
    /// Queued-but-unconsumed records, sampled per consumed record.
    pub record_lag: Distribution,
    /// Records consumed per window, per second.
    pub consumption_rate: Distribution,
    pub window_counts: Vec<u64>,
}

impl ConsumerMetrics {
    pub fn empty() -> Self {
        ConsumerMetrics {
            records: 0,
            elapsed_s: 0.0,
            overall_rate: 0.0,
            final_lag: 0,
            record_lag: Distribution::zero(),
            consumption_rate: Distribution::zero(),
            window_counts: Vec::new(),
        }
    }
}
