//! File replay into an in-process bounded topic.

use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::metrics::Counters;
use crate::geo::TimestampedPoint;
use crate::io::{group_trajectories, read_points_csv, GroupStats, IoError, ReadStats};

pub const DEFAULT_TOPIC_CAPACITY: usize = 65_536;

/// Replay pace: as fast as the consumer takes records, or data time divided
/// by a multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplaySpeed {
    #[default]
    Max,
    Multiplier(f64),
}

impl FromStr for ReplaySpeed {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(ReplaySpeed::Max);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(ReplaySpeed::Multiplier(v)),
            _ => Err(format!("speed must be \"max\" or a positive multiplier, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamRecord {
    pub point: TimestampedPoint,
    /// Wall-clock time the record entered the topic.
    pub ingest_time: Instant,
}

/// Records of a file in replay order, plus what was dropped while loading.
#[derive(Debug, Clone)]
pub struct Replay {
    pub records: Vec<TimestampedPoint>,
    pub read: ReadStats,
    pub grouping: GroupStats,
}

impl Replay {
    /// Sorts by timestamp (stable, so equal timestamps keep file order) and
    /// removes objects the batch loader would skip.
    pub fn from_points(points: Vec<TimestampedPoint>, read: ReadStats) -> Self {
        let (_, grouping) = group_trajectories(points.clone());
        let mut records: Vec<TimestampedPoint> = if grouping.skipped_objects.is_empty() {
            points
        } else {
            points.into_iter().filter(|p| !grouping.skipped_objects.iter().any(|s| s == p.object_id.as_str())).collect()
        };
        records.sort_by(|a, b| a.t.total_cmp(&b.t));
        Replay { records, read, grouping }
    }
}

pub fn load_replay(path: &Path) -> Result<Replay, IoError> {
    let (points, read) = read_points_csv(path)?;
    Ok(Replay::from_points(points, read))
}

/// Wall-clock schedule for a replay.
#[derive(Debug, Clone, Copy)]
pub struct Pacer {
    speed: ReplaySpeed,
    start: Instant,
    t0: Option<f64>,
}

impl Pacer {
    pub fn new(speed: ReplaySpeed) -> Self {
        Pacer { speed, start: Instant::now(), t0: None }
    }

    /// Blocks until the record with data time `t` is due.
    pub fn wait(&mut self, t: f64) {
        let ReplaySpeed::Multiplier(s) = self.speed else { return };
        let t0 = *self.t0.get_or_insert(t);
        let due = self.start + Duration::from_secs_f64(((t - t0) / s).max(0.0));
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

/// Ordered stream of records, paced as requested, for a single-threaded run.
pub fn replay_stream(records: Vec<TimestampedPoint>, speed: ReplaySpeed) -> impl Iterator<Item = StreamRecord> {
    let mut pacer = Pacer::new(speed);
    records.into_iter().map(move |point| {
        pacer.wait(point.t);
        StreamRecord { point, ingest_time: Instant::now() }
    })
}

/// Bounded topic between the producer and the consumers.
pub fn topic(capacity: usize) -> (SyncSender<StreamRecord>, Receiver<StreamRecord>) {
    sync_channel(capacity.max(1))
}

/// Producer thread: paces the records and pushes them into the topic,
/// blocking when it is full.
pub fn spawn_producer(
    records: Vec<TimestampedPoint>,
    speed: ReplaySpeed,
    tx: SyncSender<StreamRecord>,
    counters: Arc<Counters>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for rec in replay_stream(records, speed) {
            counters.mark_produced();
            if tx.send(rec).is_err() {
                break;
            }
        }
    })
}
