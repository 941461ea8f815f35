//! Points, trajectories, bounding rectangles and time intervals.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for all great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres per second in one knot.
pub const KNOT_MPS: f64 = 1852.0 / 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate lon={lon} lat={lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("non-finite timestamp")]
    InvalidTimestamp,
    #[error("empty geometry")]
    EmptyGeometry,
    #[error("trajectory of {object} is not strictly increasing in time at t={t}")]
    NonMonotonic { object: ObjectId, t: f64 },
    #[error("trajectory mixes objects {expected} and {found}")]
    MixedObjects { expected: ObjectId, found: ObjectId },
    #[error("trajectory of {object} crosses the antimeridian at t={t}")]
    AntimeridianCrossing { object: ObjectId, t: f64 },
    #[error("invalid bounding rectangle")]
    InvalidMbr,
    #[error("invalid interval [{start}, {end}]")]
    InvalidInterval { start: f64, end: f64 },
}

/// Opaque moving-object identifier. Cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(Arc<str>);

impl ObjectId {
    pub fn new(id: impl AsRef<str>) -> Self {
        ObjectId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        ObjectId::new(s)
    }
}

impl From<String> for ObjectId {
    fn from(s: String) -> Self {
        ObjectId(Arc::from(s))
    }
}

/// A located, timestamped sample of one object. `t` is seconds since the
/// Unix epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampedPoint {
    pub object_id: ObjectId,
    pub lon: f64,
    pub lat: f64,
    pub t: f64,
}

impl TimestampedPoint {
    pub fn new(object_id: impl Into<ObjectId>, lon: f64, lat: f64, t: f64) -> Result<Self, GeoError> {
        if !valid_lon_lat(lon, lat) {
            return Err(GeoError::InvalidCoordinate { lon, lat });
        }
        if !t.is_finite() {
            return Err(GeoError::InvalidTimestamp);
        }
        Ok(TimestampedPoint { object_id: object_id.into(), lon, lat, t })
    }
}

pub fn valid_lon_lat(lon: f64, lat: f64) -> bool {
    lon.is_finite() && lat.is_finite() && (-180.0..=180.0).contains(&lon) && (-90.0..=90.0).contains(&lat)
}

/// Great-circle distance in metres between two lon/lat positions (degrees).
pub fn haversine_m(lon_a: f64, lat_a: f64, lon_b: f64, lat_b: f64) -> f64 {
    let (phi_a, phi_b) = (lat_a.to_radians(), lat_b.to_radians());
    let d_phi = phi_b - phi_a;
    let d_lambda = (lon_b - lon_a).to_radians();
    let h = (d_phi / 2.0).sin().powi(2) + phi_a.cos() * phi_b.cos() * (d_lambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn haversine_distance(a: &TimestampedPoint, b: &TimestampedPoint) -> f64 {
    haversine_m(a.lon, a.lat, b.lon, b.lat)
}

/// Speed in knots implied by moving from `a` to `b`. Infinite when the two
/// samples share a timestamp but not a position.
pub fn speed_knots(a: &TimestampedPoint, b: &TimestampedPoint) -> f64 {
    let dist = haversine_distance(a, b);
    let dt = (b.t - a.t).abs();
    if dt == 0.0 {
        return if dist == 0.0 { 0.0 } else { f64::INFINITY };
    }
    dist / dt / KNOT_MPS
}

/// Time-ordered samples of a single object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    object_id: ObjectId,
    points: Vec<TimestampedPoint>,
}

impl Trajectory {
    pub fn new(object_id: impl Into<ObjectId>, points: Vec<TimestampedPoint>) -> Result<Self, GeoError> {
        let object_id = object_id.into();
        for p in &points {
            if p.object_id != object_id {
                return Err(GeoError::MixedObjects { expected: object_id, found: p.object_id.clone() });
            }
        }
        for w in points.windows(2) {
            if w[1].t <= w[0].t {
                return Err(GeoError::NonMonotonic { object: object_id, t: w[1].t });
            }
            if (w[1].lon - w[0].lon).abs() > 180.0 {
                return Err(GeoError::AntimeridianCrossing { object: object_id, t: w[1].t });
            }
        }
        Ok(Trajectory { object_id, points })
    }

    /// Builds a trajectory from points already known to satisfy the
    /// invariants (all operations in this crate preserve them).
    pub(crate) fn from_valid(object_id: ObjectId, points: Vec<TimestampedPoint>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].t < w[1].t));
        debug_assert!(points.iter().all(|p| p.object_id == object_id));
        Trajectory { object_id, points }
    }

    pub fn empty(object_id: impl Into<ObjectId>) -> Self {
        Trajectory { object_id: object_id.into(), points: Vec::new() }
    }

    pub fn object_id(&self) -> &ObjectId {
        &self.object_id
    }

    pub fn points(&self) -> &[TimestampedPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<TimestampedPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&TimestampedPoint> {
        self.points.last()
    }

    /// The trailing `n` points (or all of them when shorter).
    pub fn tail(&self, n: usize) -> Trajectory {
        let start = self.points.len().saturating_sub(n);
        Trajectory { object_id: self.object_id.clone(), points: self.points[start..].to_vec() }
    }
}

/// Axis-aligned lon/lat rectangle, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mbr {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Mbr {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self, GeoError> {
        let ok = [lon_min, lon_max, lat_min, lat_max].iter().all(|v| v.is_finite())
            && lon_min <= lon_max
            && lat_min <= lat_max;
        if !ok {
            return Err(GeoError::InvalidMbr);
        }
        Ok(Mbr { lon_min, lon_max, lat_min, lat_max })
    }

    pub fn point(lon: f64, lat: f64) -> Self {
        Mbr { lon_min: lon, lon_max: lon, lat_min: lat, lat_max: lat }
    }

    pub fn expand(&mut self, lon: f64, lat: f64) {
        self.lon_min = self.lon_min.min(lon);
        self.lon_max = self.lon_max.max(lon);
        self.lat_min = self.lat_min.min(lat);
        self.lat_max = self.lat_max.max(lat);
    }

    pub fn union(&self, other: &Mbr) -> Mbr {
        Mbr {
            lon_min: self.lon_min.min(other.lon_min),
            lon_max: self.lon_max.max(other.lon_max),
            lat_min: self.lat_min.min(other.lat_min),
            lat_max: self.lat_max.max(other.lat_max),
        }
    }

    /// Area in squared degrees.
    pub fn area(&self) -> f64 {
        (self.lon_max - self.lon_min) * (self.lat_max - self.lat_min)
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lon_min..=self.lon_max).contains(&lon) && (self.lat_min..=self.lat_max).contains(&lat)
    }

    pub fn intersection_area(&self, other: &Mbr) -> f64 {
        let w = self.lon_max.min(other.lon_max) - self.lon_min.max(other.lon_min);
        let h = self.lat_max.min(other.lat_max) - self.lat_min.max(other.lat_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Corner list, used to rebuild the box from points.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.lon_min, self.lat_min),
            (self.lon_min, self.lat_max),
            (self.lon_max, self.lat_min),
            (self.lon_max, self.lat_max),
        ]
    }
}

pub fn mbr_of_points<'a, I>(pts: I) -> Result<Mbr, GeoError>
where
    I: IntoIterator<Item = &'a TimestampedPoint>,
{
    mbr_of_coords(pts.into_iter().map(|p| (p.lon, p.lat)))
}

pub fn mbr_of_coords<I>(coords: I) -> Result<Mbr, GeoError>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut it = coords.into_iter();
    let (lon, lat) = it.next().ok_or(GeoError::EmptyGeometry)?;
    let mut mbr = Mbr::point(lon, lat);
    for (lon, lat) in it {
        mbr.expand(lon, lat);
    }
    Ok(mbr)
}

/// Intersection over union. A zero-area box only matches an identical box.
pub fn mbr_iou(a: &Mbr, b: &Mbr) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a == 0.0 || area_b == 0.0 {
        return if a == b && area_a == area_b { 1.0 } else { 0.0 };
    }
    let inter = a.intersection_area(b);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Closed time interval, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, GeoError> {
        if !(start.is_finite() && end.is_finite() && start <= end) {
            return Err(GeoError::InvalidInterval { start, end });
        }
        Ok(TimeInterval { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    pub fn intersects(&self, other: &TimeInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Overlap length over covered length. Zero-length intervals follow the same
/// rule as degenerate boxes.
pub fn interval_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a == b { 1.0 } else { 0.0 };
    }
    let inter = a.overlap(b);
    let union = a.len() + b.len() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Metres-to-degrees conversion around a reference latitude (local
/// equirectangular approximation).
pub fn offset_degrees(lat_ref: f64, east_m: f64, north_m: f64) -> (f64, f64) {
    let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let m_per_deg_lon = m_per_deg_lat * lat_ref.to_radians().cos();
    (east_m / m_per_deg_lon, north_m / m_per_deg_lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lon: f64, lat: f64) -> TimestampedPoint {
        TimestampedPoint::new("x", lon, lat, 0.0).unwrap()
    }

    #[test]
    fn haversine_identity_and_equator_degree() {
        assert_eq!(haversine_distance(&p(23.5, 37.9), &p(23.5, 37.9)), 0.0);
        // R * pi / 180
        let expected = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let d = haversine_distance(&p(0.0, 0.0), &p(1.0, 0.0));
        assert!((d - expected).abs() < 1e-6);
        assert!((d - 111_195.0).abs() < 1.0);
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(TimestampedPoint::new("a", 181.0, 0.0, 0.0).is_err());
        assert!(TimestampedPoint::new("a", 0.0, -90.5, 0.0).is_err());
        assert!(TimestampedPoint::new("a", f64::NAN, 0.0, 0.0).is_err());
        assert!(TimestampedPoint::new("a", 0.0, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let a = TimestampedPoint::new("a", 0.0, 0.0, 0.0).unwrap();
        let b = TimestampedPoint::new("a", 0.0, 0.0, 10.0).unwrap();
        let other = TimestampedPoint::new("b", 0.0, 0.0, 20.0).unwrap();
        assert!(Trajectory::new("a", vec![a.clone(), b.clone()]).is_ok());
        assert!(matches!(Trajectory::new("a", vec![b.clone(), a.clone()]), Err(GeoError::NonMonotonic { .. })));
        assert!(matches!(Trajectory::new("a", vec![a.clone(), other]), Err(GeoError::MixedObjects { .. })));
        let east = TimestampedPoint::new("a", 179.9, 0.0, 0.0).unwrap();
        let west = TimestampedPoint::new("a", -179.9, 0.0, 60.0).unwrap();
        assert!(matches!(Trajectory::new("a", vec![east, west]), Err(GeoError::AntimeridianCrossing { .. })));
    }

    #[test]
    fn mbr_examples() {
        assert_eq!(mbr_of_points(&[p(0.0, 0.0)]).unwrap(), Mbr::point(0.0, 0.0));
        assert_eq!(mbr_of_points(&[p(0.0, 0.0), p(2.0, 1.0)]).unwrap(), Mbr::new(0.0, 2.0, 0.0, 1.0).unwrap());
        assert_eq!(mbr_of_points(&[]), Err(GeoError::EmptyGeometry));
    }

    #[test]
    fn iou_examples() {
        let unit = Mbr::new(0.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(mbr_iou(&unit, &unit), 1.0);
        assert_eq!(mbr_iou(&unit, &Mbr::new(2.0, 3.0, 0.0, 1.0).unwrap()), 0.0);
        let shifted = Mbr::new(0.5, 1.5, 0.0, 1.0).unwrap();
        assert!((mbr_iou(&unit, &shifted) - 1.0 / 3.0).abs() < 1e-12);
        // degenerate boxes
        assert_eq!(mbr_iou(&Mbr::point(1.0, 1.0), &Mbr::point(1.0, 1.0)), 1.0);
        assert_eq!(mbr_iou(&Mbr::point(1.0, 1.0), &Mbr::point(1.0, 2.0)), 0.0);
        assert_eq!(mbr_iou(&Mbr::point(0.5, 0.5), &unit), 0.0);

        let i = |a, b| TimeInterval::new(a, b).unwrap();
        assert_eq!(interval_iou(&i(0.0, 10.0), &i(0.0, 10.0)), 1.0);
        assert_eq!(interval_iou(&i(0.0, 10.0), &i(20.0, 30.0)), 0.0);
        assert!((interval_iou(&i(0.0, 10.0), &i(5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(interval_iou(&i(0.0, 10.0), &i(10.0, 20.0)), 0.0);
        assert_eq!(interval_iou(&i(3.0, 3.0), &i(3.0, 3.0)), 1.0);
    }

    fn coord() -> impl Strategy<Value = (f64, f64)> {
        (-179.0..179.0f64, -80.0..80.0f64)
    }

    fn mbr() -> impl Strategy<Value = Mbr> {
        (coord(), coord()).prop_map(|((a, b), (c, d))| Mbr::new(a.min(c), a.max(c), b.min(d), b.max(d)).unwrap())
    }

    proptest! {
        #[test]
        fn haversine_symmetric_and_triangle(a in coord(), b in coord(), c in coord()) {
            let ab = haversine_m(a.0, a.1, b.0, b.1);
            let ba = haversine_m(b.0, b.1, a.0, a.1);
            let bc = haversine_m(b.0, b.1, c.0, c.1);
            let ac = haversine_m(a.0, a.1, c.0, c.1);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn iou_symmetric_bounded(a in mbr(), b in mbr()) {
            let x = mbr_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, mbr_iou(&b, &a));
            if a.area() > 0.0 {
                prop_assert_eq!(mbr_iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn interval_iou_symmetric_bounded(s1 in 0.0..1e4f64, l1 in 0.0..1e4f64, s2 in 0.0..1e4f64, l2 in 0.0..1e4f64) {
            let a = TimeInterval::new(s1, s1 + l1).unwrap();
            let b = TimeInterval::new(s2, s2 + l2).unwrap();
            let x = interval_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, interval_iou(&b, &a));
            prop_assert_eq!(interval_iou(&a, &a), 1.0);
        }

        #[test]
        fn mbr_containment_tight_and_idempotent(pts in prop::collection::vec(coord(), 1..50)) {
            let points: Vec<_> = pts.iter().map(|&(lon, lat)| p(lon, lat)).collect();
            let b = mbr_of_points(&points).unwrap();
            for q in &points {
                prop_assert!(b.contains(q.lon, q.lat));
            }
            // every side is touched by some point, so shrinking it excludes that point
            prop_assert!(points.iter().any(|q| q.lon == b.lon_min));
            prop_assert!(points.iter().any(|q| q.lon == b.lon_max));
            prop_assert!(points.iter().any(|q| q.lat == b.lat_min));
            prop_assert!(points.iter().any(|q| q.lat == b.lat_max));
            prop_assert_eq!(mbr_of_coords(b.corners()).unwrap(), b);
        }
    }
}
