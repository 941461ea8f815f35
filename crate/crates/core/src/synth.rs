//! Synthetic fleets with scripted groups.
//!
//! Every group and every ungrouped object travels along its own lane; lanes
//! sit on a square grid `lane_spacing_m` apart and all drift east at
//! `speed_knots`. A group's members sit on a circle of `disperse_radius_m`
//! around the group centre, converge onto the formation circle before the
//! scripted start, hold formation until the scripted end, then spread out
//! again. Outside formation no two objects are within `disperse_radius_m *
//! 2 sin(pi / members)` of each other.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolving::Members;
use crate::geo::{offset_degrees, TimestampedPoint, KNOT_MPS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    Linear,
    Arc,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub members: usize,
    /// Radius of the formation circle, metres.
    pub radius_m: f64,
    /// Scripted formation window, seconds from the scenario start.
    pub start: f64,
    pub end: f64,
    pub motion: MotionModel,
}

fn default_origin_lon() -> f64 {
    24.0
}
fn default_origin_lat() -> f64 {
    37.0
}
fn default_lane_spacing() -> f64 {
    30_000.0
}
fn default_disperse_radius() -> f64 {
    10_000.0
}
fn default_speed() -> f64 {
    10.0
}
fn default_transition_speed() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScenario {
    pub n_objects: usize,
    /// Seconds.
    pub duration: f64,
    /// Seconds between fixes of one object; each object gets its own phase.
    pub sample_rate: f64,
    pub groups: Vec<GroupSpec>,
    /// Isotropic position noise, metres (standard deviation).
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Unix time of the scenario start.
    #[serde(default)]
    pub start_time: i64,
    #[serde(default = "default_origin_lon")]
    pub origin_lon: f64,
    /// Also the reference latitude for metre-to-degree conversion.
    #[serde(default = "default_origin_lat")]
    pub origin_lat: f64,
    #[serde(default = "default_lane_spacing")]
    pub lane_spacing_m: f64,
    #[serde(default = "default_disperse_radius")]
    pub disperse_radius_m: f64,
    /// Common drift speed, knots.
    #[serde(default = "default_speed")]
    pub speed_knots: f64,
    /// Radial speed while joining or leaving formation, m/s.
    #[serde(default = "default_transition_speed")]
    pub transition_speed: f64,
}

impl SynthScenario {
    /// A scenario with default geometry.
    pub fn new(n_objects: usize, duration: f64, sample_rate: f64, groups: Vec<GroupSpec>, noise_sigma: f64, rng_seed: u64) -> Self {
        SynthScenario {
            n_objects,
            duration,
            sample_rate,
            groups,
            noise_sigma,
            rng_seed,
            start_time: 0,
            origin_lon: default_origin_lon(),
            origin_lat: default_origin_lat(),
            lane_spacing_m: default_lane_spacing(),
            disperse_radius_m: default_disperse_radius(),
            speed_knots: default_speed(),
            transition_speed: default_transition_speed(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut v = Vec::new();
        if self.n_objects == 0 {
            v.push("n_objects must be positive".to_string());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            v.push(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= self.duration) {
            v.push(format!("sample_rate must lie in (0, duration], got {}", self.sample_rate));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            v.push(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.origin_lat.abs() < 80.0 && self.origin_lon.abs() <= 180.0) {
            v.push("origin must be a valid position below 80 degrees latitude".to_string());
        }
        if !(self.disperse_radius_m > 0.0 && self.lane_spacing_m > 2.0 * self.disperse_radius_m) {
            v.push("lane_spacing_m must exceed twice disperse_radius_m".to_string());
        }
        if !(self.speed_knots > 0.0 && self.transition_speed > 0.0) {
            v.push("speed_knots and transition_speed must be positive".to_string());
        }
        let mut total = 0;
        for (i, g) in self.groups.iter().enumerate() {
            total += g.members;
            if g.members < 2 {
                v.push(format!("group {i}: needs at least 2 members, got {}", g.members));
            }
            if g.members > self.n_objects {
                v.push(format!("group {i}: {} members but only {} objects", g.members, self.n_objects));
            }
            if !(g.radius_m > 0.0 && g.radius_m < self.disperse_radius_m) {
                v.push(format!("group {i}: radius_m must lie in (0, disperse_radius_m), got {}", g.radius_m));
            }
            if !(g.start >= 0.0 && g.end <= self.duration && g.start < g.end) {
                v.push(format!("group {i}: window [{}, {}] must satisfy 0 <= start < end <= duration", g.start, g.end));
            }
        }
        if total > self.n_objects {
            v.push(format!("groups need {total} distinct members but only {} objects exist", self.n_objects));
        }
        let lanes = self.groups.len() + self.n_objects.saturating_sub(total);
        let side = (lanes as f64).sqrt().ceil();
        let (dlon, dlat) = offset_degrees(self.origin_lat, side * self.lane_spacing_m + self.duration * self.speed_knots * KNOT_MPS, side * self.lane_spacing_m);
        if self.origin_lon + dlon > 179.0 || self.origin_lat + dlat > 85.0 {
            v.push("fleet extent leaves the valid coordinate range".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(SynthError::Invalid(v))
        }
    }
}

/// A scripted group: who and when (Unix seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub members: Members,
    pub t_start: f64,
    pub t_end: f64,
    pub motion: MotionModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Sorted by time, then object id.
    pub points: Vec<TimestampedPoint>,
    pub truth: Vec<GroundTruth>,
}

/// Centre path offset for a motion model, metres east/north, plus its
/// random-walk knots when needed.
struct CentrePath {
    motion: MotionModel,
    phase: f64,
    knots: Vec<(f64, f64)>,
    knot_dt: f64,
    duration: f64,
}

const WALK_KNOT_DT: f64 = 600.0;
const WALK_MAX_SPEED: f64 = 2.0;
const ARC_AMPLITUDE: f64 = 2_000.0;

impl CentrePath {
    fn new(motion: MotionModel, duration: f64, rng: &mut ChaCha8Rng) -> Self {
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut knots = vec![(0.0, 0.0)];
        if motion == MotionModel::RandomWalk {
            let n = (duration / WALK_KNOT_DT).ceil() as usize + 2;
            let (mut x, mut y) = (0.0f64, 0.0f64);
            for _ in 0..n {
                let ux = (rng.random_range(-1.0..1.0) - x / 5_000.0).clamp(-1.0, 1.0) * WALK_MAX_SPEED;
                let uy = (rng.random_range(-1.0..1.0) - y / 5_000.0).clamp(-1.0, 1.0) * WALK_MAX_SPEED;
                x += ux * WALK_KNOT_DT;
                y += uy * WALK_KNOT_DT;
                knots.push((x, y));
            }
        }
        CentrePath { motion, phase, knots, knot_dt: WALK_KNOT_DT, duration }
    }

    fn offset(&self, t: f64) -> (f64, f64) {
        match self.motion {
            MotionModel::Linear => (0.0, 0.0),
            MotionModel::Arc => {
                let w = 2.0 * PI / self.duration.max(1.0);
                let a = self.phase + w * t;
                (ARC_AMPLITUDE * (a.sin() - self.phase.sin()), ARC_AMPLITUDE * (self.phase.cos() - a.cos()))
            }
            MotionModel::RandomWalk => {
                let pos = (t / self.knot_dt).max(0.0);
                let k = (pos.floor() as usize).min(self.knots.len() - 2);
                let f = pos - k as f64;
                let (a, b) = (self.knots[k], self.knots[k + 1]);
                (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
            }
        }
    }
}

struct Role {
    lane: usize,
    /// (group index, slot among members)
    group: Option<(usize, usize)>,
}

fn object_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| format!("v{i:0width$}")).collect()
}

pub fn generate(s: &SynthScenario) -> Result<SynthOutput, SynthError> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
    let ids = object_ids(s.n_objects);

    let mut roles = Vec::with_capacity(s.n_objects);
    for (g, spec) in s.groups.iter().enumerate() {
        for k in 0..spec.members {
            roles.push(Role { lane: g, group: Some((g, k)) });
        }
    }
    let mut lane = s.groups.len();
    while roles.len() < s.n_objects {
        roles.push(Role { lane, group: None });
        lane += 1;
    }
    let side = (lane as f64).sqrt().ceil() as usize;
    let lane_xy = |l: usize| ((l % side) as f64 * s.lane_spacing_m, (l / side) as f64 * s.lane_spacing_m);

    let group_paths: Vec<CentrePath> = s.groups.iter().map(|g| CentrePath::new(g.motion, s.duration, &mut rng)).collect();
    let group_rot: Vec<f64> = s.groups.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let phases: Vec<f64> = (0..s.n_objects).map(|_| rng.random_range(0..s.sample_rate.max(1.0) as u64) as f64).collect();
    let vx = s.speed_knots * KNOT_MPS;
    let ramp = |g: &GroupSpec| (s.disperse_radius_m - g.radius_m) / s.transition_speed;

    let position = |i: usize, t: f64| -> (f64, f64) {
        let role = &roles[i];
        let (lx, ly) = lane_xy(role.lane);
        let (cx, cy) = (lx + vx * t, ly);
        let Some((g, k)) = role.group else { return (cx, cy) };
        let spec = &s.groups[g];
        let (ox, oy) = group_paths[g].offset(t);
        let tau = ramp(spec);
        let rho = if t < spec.start {
            spec.radius_m + (spec.start - t) / tau * (s.disperse_radius_m - spec.radius_m)
        } else if t > spec.end {
            spec.radius_m + (t - spec.end) / tau * (s.disperse_radius_m - spec.radius_m)
        } else {
            spec.radius_m
        }
        .min(s.disperse_radius_m);
        let a = group_rot[g] + 2.0 * PI * k as f64 / spec.members as f64;
        (cx + ox + rho * a.cos(), cy + oy + rho * a.sin())
    };

    let noise = Normal::new(0.0, s.noise_sigma.max(0.0)).expect("finite sigma");
    let mut points = Vec::new();
    for i in 0..s.n_objects {
        let mut t = phases[i];
        while t <= s.duration {
            let (mut x, mut y) = position(i, t);
            if s.noise_sigma > 0.0 {
                x += noise.sample(&mut rng);
                y += noise.sample(&mut rng);
            }
            let (dlon, dlat) = offset_degrees(s.origin_lat, x, y);
            let lon = round7(s.origin_lon + dlon);
            let lat = round7(s.origin_lat + dlat);
            let p = TimestampedPoint::new(ids[i].as_str(), lon, lat, s.start_time as f64 + t)
                .expect("validated extent keeps coordinates valid");
            points.push(p);
            t += s.sample_rate;
        }
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.object_id.cmp(&b.object_id)));

    let mut truth = Vec::with_capacity(s.groups.len());
    for (g, spec) in s.groups.iter().enumerate() {
        let members = Members::new(roles.iter().enumerate().filter(|(_, r)| r.group.map(|x| x.0) == Some(g)).map(|(i, _)| ids[i].as_str()));
        truth.push(GroundTruth {
            members,
            t_start: s.start_time as f64 + spec.start,
            t_end: s.start_time as f64 + spec.end,
            motion: spec.motion,
        });
    }
    Ok(SynthOutput { points, truth })
}

fn round7(v: f64) -> f64 {
    (v * 1e7).round() / 1e7
}

/// `object_id,t,lon,lat` with seven decimals, byte-identical for a seed.
pub fn write_points<W: Write>(mut w: W, points: &[TimestampedPoint]) -> std::io::Result<()> {
    writeln!(w, "object_id,t,lon,lat")?;
    for p in points {
        writeln!(w, "{},{},{:.7},{:.7}", p.object_id, p.t as i64, p.lon, p.lat)?;
    }
    w.flush()
}

pub fn write_points_file(path: &Path, points: &[TimestampedPoint]) -> std::io::Result<()> {
    write_points(std::io::BufWriter::new(std::fs::File::create(path)?), points)
}

/// One JSON object per line.
pub fn write_truth<W: Write>(mut w: W, truth: &[GroundTruth]) -> std::io::Result<()> {
    for g in truth {
        serde_json::to_writer(&mut w, g)?;
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_truth_file(path: &Path, truth: &[GroundTruth]) -> std::io::Result<()> {
    write_truth(std::io::BufWriter::new(std::fs::File::create(path)?), truth)
}

pub fn read_truth_file(path: &Path) -> Result<Vec<GroundTruth>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SynthError::Invalid(vec![format!("line {}: {e}", i + 1)])))
        .collect()
}
