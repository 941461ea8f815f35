//! Cleansing and temporal alignment of raw trajectories.
//!
//! Fixed order: speed filter, stop removal, gap segmentation, alignment onto
//! the shared grid `epoch + k * align_rate`. [`StreamingPreprocessor`] runs
//! the same chain one record at a time and produces the same aligned points
//! as the batch functions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::geo::{speed_knots, ObjectId, TimestampedPoint, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Records implying a higher speed than this (knots) are noise.
    pub speed_max: f64,
    /// Consecutive records further apart than this (seconds) start a new trajectory.
    pub gap_dt: f64,
    /// Records slower than this (knots) relative to the last kept one are stop points.
    pub stop_speed: f64,
    /// Grid spacing in seconds.
    pub align_rate: i64,
    /// Grid origin, seconds since the Unix epoch.
    pub epoch: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { speed_max: 50.0, gap_dt: 1800.0, stop_speed: 0.5, align_rate: 60, epoch: 0 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: &str| Err(PreprocessError::InvalidConfig(m.to_string()));
        if !(self.speed_max > 0.0 && self.speed_max.is_finite()) {
            return bad("speed_max must be positive");
        }
        if !(self.gap_dt > 0.0 && self.gap_dt.is_finite()) {
            return bad("gap_dt must be positive");
        }
        if !(self.stop_speed > 0.0) {
            return bad("stop_speed must be positive");
        }
        if self.stop_speed >= self.speed_max {
            return bad("stop_speed must be below speed_max");
        }
        if self.align_rate <= 0 {
            return bad("align_rate must be positive");
        }
        Ok(())
    }
}

/// Truncates a timestamp to the whole minute, the default grid origin for a
/// stream starting at `t`.
pub fn minute_epoch(t: f64) -> i64 {
    (t / 60.0).floor() as i64 * 60
}

/// Greedy forward scan: drops a point when the speed from the last kept point
/// exceeds `speed_max` knots.
pub fn filter_speed_outliers(traj: &Trajectory, speed_max: f64) -> Trajectory {
    let mut kept: Vec<TimestampedPoint> = Vec::with_capacity(traj.len());
    for p in traj.points() {
        match kept.last() {
            Some(last) if speed_knots(last, p) > speed_max => {}
            _ => kept.push(p.clone()),
        }
    }
    Trajectory::from_valid(traj.object_id().clone(), kept)
}

/// Drops points moving slower than `stop_speed` knots relative to the last
/// kept point. An anchored stretch collapses onto its entry point.
pub fn remove_stop_points(traj: &Trajectory, stop_speed: f64) -> Trajectory {
    let mut kept: Vec<TimestampedPoint> = Vec::with_capacity(traj.len());
    for p in traj.points() {
        match kept.last() {
            Some(last) if speed_knots(last, p) < stop_speed => {}
            _ => kept.push(p.clone()),
        }
    }
    Trajectory::from_valid(traj.object_id().clone(), kept)
}

/// Splits wherever consecutive samples are more than `gap_dt` seconds apart.
pub fn segment_by_gap(traj: &Trajectory, gap_dt: f64) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut current: Vec<TimestampedPoint> = Vec::new();
    for p in traj.points() {
        if let Some(last) = current.last() {
            if p.t - last.t > gap_dt {
                out.push(Trajectory::from_valid(traj.object_id().clone(), std::mem::take(&mut current)));
            }
        }
        current.push(p.clone());
    }
    if !current.is_empty() {
        out.push(Trajectory::from_valid(traj.object_id().clone(), current));
    }
    out
}

/// First grid index whose timestamp is `>= t`.
fn grid_index_ceil(t: f64, rate: i64, epoch: i64) -> i64 {
    let mut k = ((t - epoch as f64) / rate as f64).ceil() as i64;
    // guard against division rounding
    while grid_time(k - 1, rate, epoch) >= t {
        k -= 1;
    }
    while grid_time(k, rate, epoch) < t {
        k += 1;
    }
    k
}

fn grid_time(k: i64, rate: i64, epoch: i64) -> f64 {
    (epoch + k * rate) as f64
}

fn lerp_point(a: &TimestampedPoint, b: &TimestampedPoint, t: f64) -> TimestampedPoint {
    if t == a.t {
        return a.clone();
    }
    if t == b.t {
        return b.clone();
    }
    let f = (t - a.t) / (b.t - a.t);
    TimestampedPoint {
        object_id: a.object_id.clone(),
        lon: a.lon + (b.lon - a.lon) * f,
        lat: a.lat + (b.lat - a.lat) * f,
        t,
    }
}

/// Grid points in `(a.t, b.t]`, or `[a.t, b.t]` when `include_start`.
fn grid_points_between(
    a: &TimestampedPoint,
    b: &TimestampedPoint,
    include_start: bool,
    rate: i64,
    epoch: i64,
    out: &mut Vec<TimestampedPoint>,
) {
    let mut k = grid_index_ceil(a.t, rate, epoch);
    if !include_start && grid_time(k, rate, epoch) == a.t {
        k += 1;
    }
    loop {
        let t = grid_time(k, rate, epoch);
        if t > b.t {
            break;
        }
        out.push(lerp_point(a, b, t));
        k += 1;
    }
}

/// Resamples onto `epoch + k * align_rate` within `[t_first, t_last]` by
/// linear interpolation in lon and lat. No extrapolation; fewer than two
/// points give an empty trajectory.
pub fn align_linear(traj: &Trajectory, align_rate: i64, epoch: i64) -> Trajectory {
    assert!(align_rate > 0, "align_rate must be positive");
    let pts = traj.points();
    let mut out = Vec::new();
    if pts.len() >= 2 {
        for (i, w) in pts.windows(2).enumerate() {
            grid_points_between(&w[0], &w[1], i == 0, align_rate, epoch, &mut out);
        }
    }
    Trajectory::from_valid(traj.object_id().clone(), out)
}

/// Full cleansing chain for one object. Returns the aligned, non-empty segments.
pub fn preprocess_trajectory(traj: &Trajectory, cfg: &PreprocessConfig) -> Vec<Trajectory> {
    let cleaned = remove_stop_points(&filter_speed_outliers(traj, cfg.speed_max), cfg.stop_speed);
    segment_by_gap(&cleaned, cfg.gap_dt)
        .iter()
        .map(|seg| align_linear(seg, cfg.align_rate, cfg.epoch))
        .filter(|seg| !seg.is_empty())
        .collect()
}

pub fn preprocess_all(trajs: &[Trajectory], cfg: &PreprocessConfig, exec: Execution) -> Vec<Trajectory> {
    exec.map(trajs, |t| preprocess_trajectory(t, cfg)).into_iter().flatten().collect()
}

/// Record-at-a-time version of [`preprocess_trajectory`] for one object.
#[derive(Debug, Clone)]
pub struct StreamingPreprocessor {
    cfg: PreprocessConfig,
    last_speed_kept: Option<TimestampedPoint>,
    last_stop_kept: Option<TimestampedPoint>,
    /// Last point of the current segment and whether the segment has
    /// emitted its first interval yet.
    segment_last: Option<TimestampedPoint>,
    segment_started: bool,
}

impl StreamingPreprocessor {
    pub fn new(cfg: PreprocessConfig) -> Self {
        StreamingPreprocessor { cfg, last_speed_kept: None, last_stop_kept: None, segment_last: None, segment_started: false }
    }

    /// Feeds one raw record (must be later than the previous one) and
    /// returns the aligned points it completes. A returned `true` flag means
    /// the record opened a new segment, so earlier history is unrelated.
    pub fn push(&mut self, p: TimestampedPoint) -> (Vec<TimestampedPoint>, bool) {
        let mut out = Vec::new();
        if let Some(last) = &self.last_speed_kept {
            if p.t <= last.t || speed_knots(last, &p) > self.cfg.speed_max {
                return (out, false);
            }
        }
        self.last_speed_kept = Some(p.clone());
        if let Some(last) = &self.last_stop_kept {
            if speed_knots(last, &p) < self.cfg.stop_speed {
                return (out, false);
            }
        }
        self.last_stop_kept = Some(p.clone());

        let mut new_segment = false;
        match self.segment_last.take() {
            Some(prev) if p.t - prev.t <= self.cfg.gap_dt => {
                grid_points_between(&prev, &p, !self.segment_started, self.cfg.align_rate, self.cfg.epoch, &mut out);
                self.segment_started = true;
            }
            Some(_) => {
                new_segment = true;
                self.segment_started = false;
            }
            None => {
                new_segment = true;
            }
        }
        self.segment_last = Some(p);
        (out, new_segment)
    }

    pub fn object_id(&self) -> Option<&ObjectId> {
        self.segment_last.as_ref().map(|p| &p.object_id)
    }
}
