//! CSV readers and writers for points, clusters, matches and predictions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

use crate::evaluation::MatchReport;
use crate::evolving::{ClusterKind, EvolvingCluster, Members, TimeSlice};
use crate::geo::{GeoError, ObjectId, TimestampedPoint, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

/// Counters reported after reading a points file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ReadStats {
    pub records: usize,
    pub malformed: usize,
    pub header: bool,
}

/// Seconds since the Unix epoch from either a number or an ISO-8601 /
/// RFC 3339 timestamp (naive timestamps are taken as UTC).
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let u = dt.and_utc();
            return Some(u.timestamp() as f64 + f64::from(u.timestamp_subsec_nanos()) * 1e-9);
        }
    }
    None
}

fn parse_point(rec: &csv::StringRecord) -> Option<TimestampedPoint> {
    if rec.len() != 4 {
        return None;
    }
    let id = rec[0].trim();
    if id.is_empty() {
        return None;
    }
    let t = parse_timestamp(&rec[1])?;
    let lon = rec[2].trim().parse::<f64>().ok()?;
    let lat = rec[3].trim().parse::<f64>().ok()?;
    TimestampedPoint::new(id, lon, lat, t).ok()
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r)
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Open { path: path.display().to_string(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::Open { path: path.display().to_string(), source })
}

/// Parses `object_id,timestamp,lon,lat` rows. A first row that does not
/// parse is treated as a header; later bad rows are counted and skipped.
pub fn parse_points<R: Read>(r: R) -> Result<(Vec<TimestampedPoint>, ReadStats), IoError> {
    let mut stats = ReadStats::default();
    let mut out = Vec::new();
    for (i, rec) in csv_reader(r).records().enumerate() {
        let rec = match rec {
            Ok(rec) => rec,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                stats.malformed += 1;
                continue;
            }
        };
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match parse_point(&rec) {
            Some(p) => out.push(p),
            None if i == 0 => stats.header = true,
            None => stats.malformed += 1,
        }
    }
    stats.records = out.len();
    Ok((out, stats))
}

pub fn read_points_csv(path: &Path) -> Result<(Vec<TimestampedPoint>, ReadStats), IoError> {
    parse_points(BufReader::new(open(path)?))
}

/// Counters from [`group_trajectories`].
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct GroupStats {
    pub duplicate_timestamps: usize,
    /// Objects dropped because consecutive fixes jump across the antimeridian.
    pub skipped_objects: Vec<String>,
}

/// Splits points by object and sorts each object's points by time. Repeated
/// timestamps keep the first record in input order.
pub fn group_trajectories(points: Vec<TimestampedPoint>) -> (Vec<Trajectory>, GroupStats) {
    let mut by_obj: BTreeMap<ObjectId, Vec<TimestampedPoint>> = BTreeMap::new();
    for p in points {
        by_obj.entry(p.object_id.clone()).or_default().push(p);
    }
    let mut stats = GroupStats::default();
    let mut out = Vec::with_capacity(by_obj.len());
    for (id, mut pts) in by_obj {
        pts.sort_by(|a, b| a.t.total_cmp(&b.t));
        let before = pts.len();
        pts.dedup_by(|b, a| a.t == b.t);
        stats.duplicate_timestamps += before - pts.len();
        match Trajectory::new(id.clone(), pts) {
            Ok(t) => out.push(t),
            Err(GeoError::AntimeridianCrossing { .. }) => {
                log::warn!("skipping object {id}: track crosses the antimeridian");
                stats.skipped_objects.push(id.to_string());
            }
            Err(e) => unreachable!("grouped points violate trajectory invariant: {e}"),
        }
    }
    (out, stats)
}

pub fn fmt_time(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 9.0e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

fn write_point_rows<W: Write>(w: &mut W, header: &str, pts: &mut dyn Iterator<Item = &TimestampedPoint>) -> Result<(), IoError> {
    writeln!(w, "{header}")?;
    for p in pts {
        writeln!(w, "{},{},{},{}", p.object_id, fmt_time(p.t), p.lon, p.lat)?;
    }
    Ok(())
}

/// `object_id,t,lon,lat`, trajectories in order, points in time order.
pub fn write_points_csv(path: &Path, trajs: &[Trajectory]) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_point_rows(&mut w, "object_id,t,lon,lat", &mut trajs.iter().flat_map(|t| t.points()))?;
    w.flush()?;
    Ok(())
}

/// `object_id,t_pred,lon,lat`.
pub fn write_predictions_csv(path: &Path, preds: &[TimestampedPoint]) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_point_rows(&mut w, "object_id,t_pred,lon,lat", &mut preds.iter())?;
    w.flush()?;
    Ok(())
}

pub fn write_clusters<W: Write>(mut w: W, clusters: &[EvolvingCluster]) -> Result<(), IoError> {
    writeln!(w, "members,t_start,t_end,tp")?;
    for c in clusters {
        writeln!(w, "{},{},{},{}", c.members.joined(), c.t_start, c.t_end, c.tp.code())?;
    }
    w.flush()?;
    Ok(())
}

/// `members,t_start,t_end,tp` with members joined by `;`.
pub fn write_clusters_csv(path: &Path, clusters: &[EvolvingCluster]) -> Result<(), IoError> {
    write_clusters(create(path)?, clusters)
}

/// JSON-lines form: `{"members":"a;b","t_start":0,"t_end":60,"tp":2}`.
pub fn write_clusters_jsonl<W: Write>(mut w: W, clusters: &[EvolvingCluster]) -> Result<(), IoError> {
    #[derive(serde::Serialize)]
    struct Row<'a> {
        members: String,
        t_start: i64,
        t_end: i64,
        tp: &'a ClusterKind,
    }
    for c in clusters {
        let row = Row { members: c.members.joined(), t_start: c.t_start, t_end: c.t_end, tp: &c.tp };
        serde_json::to_writer(&mut w, &row).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_clusters_jsonl_file(path: &Path, clusters: &[EvolvingCluster]) -> Result<(), IoError> {
    write_clusters_jsonl(create(path)?, clusters)
}

pub fn parse_clusters<R: Read>(r: R) -> Result<Vec<EvolvingCluster>, IoError> {
    let mut out = Vec::new();
    for (i, rec) in csv_reader(r).records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 1;
        if i == 0 && rec.get(0) == Some("members") {
            continue;
        }
        if rec.len() != 4 {
            return Err(IoError::Parse { line, msg: format!("expected 4 fields, found {}", rec.len()) });
        }
        let bad = |what: &str| IoError::Parse { line, msg: format!("invalid {what}") };
        let members = Members::parse_joined(&rec[0]);
        if members.is_empty() {
            return Err(bad("members"));
        }
        let t_start: i64 = rec[1].parse().map_err(|_| bad("t_start"))?;
        let t_end: i64 = rec[2].parse().map_err(|_| bad("t_end"))?;
        if t_end < t_start {
            return Err(bad("lifetime (t_end < t_start)"));
        }
        let tp = rec[3].parse::<u8>().ok().and_then(ClusterKind::from_code).ok_or_else(|| bad("tp"))?;
        out.push(EvolvingCluster { members, t_start, t_end, tp });
    }
    Ok(out)
}

pub fn read_clusters_csv(path: &Path) -> Result<Vec<EvolvingCluster>, IoError> {
    parse_clusters(BufReader::new(open(path)?))
}

/// One row per predicted cluster; unmatched ones have empty actual fields
/// and zero similarities.
pub fn write_matches<W: Write>(mut w: W, report: &MatchReport) -> Result<(), IoError> {
    writeln!(w, "pred_members,pred_start,pred_end,act_members,act_start,act_end,sim_spatial,sim_temp,sim_member,sim_star")?;
    for m in &report.pairs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            m.predicted.members.joined(),
            m.predicted.t_start,
            m.predicted.t_end,
            m.actual.members.joined(),
            m.actual.t_start,
            m.actual.t_end,
            m.sim_spatial,
            m.sim_temporal,
            m.sim_member,
            m.sim_star
        )?;
    }
    for p in &report.unmatched_predicted {
        writeln!(w, "{},{},{},,,,0,0,0,0", p.members.joined(), p.t_start, p.t_end)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matches_csv(path: &Path, report: &MatchReport) -> Result<(), IoError> {
    write_matches(create(path)?, report)
}

/// Groups on-grid points into timeslices keyed by their (integral)
/// timestamp. Points off the integer grid are an error.
pub fn slices_from_points<'a, I>(points: I) -> Result<BTreeMap<i64, TimeSlice>, IoError>
where
    I: IntoIterator<Item = &'a TimestampedPoint>,
{
    let mut out: BTreeMap<i64, TimeSlice> = BTreeMap::new();
    for p in points {
        if p.t.fract() != 0.0 {
            return Err(IoError::Parse { line: 0, msg: format!("object {} has off-grid timestamp {}", p.object_id, p.t) });
        }
        let t = p.t as i64;
        out.entry(t).or_insert_with(|| TimeSlice::new(t)).insert(p.object_id.clone(), p.lon, p.lat);
    }
    Ok(out)
}
