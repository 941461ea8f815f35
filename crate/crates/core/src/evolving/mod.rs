//! Online evolving-cluster detection.
//!
//! Each aligned timeslice becomes a proximity graph (edge iff two objects are
//! within `theta` metres). Its maximal cliques (MC) and connected components
//! (MCS) with at least `c` members are matched against the active patterns:
//! a pattern continues through the intersection with a current group when
//! that intersection keeps `c` members. Patterns that stop continuing are
//! emitted if they lived for at least `d` consecutive slices.

mod detector;
mod graph;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::ObjectId;

pub use detector::{detect_batch, ActivePattern, EvolvingClusters};
pub use graph::{build_proximity_graph, build_proximity_graph_with, maximal_components, Groups, ProximityGraph};

pub const DEFAULT_CLIQUE_LIMIT: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("non-monotonic time: slice {got} after {prev}")]
    NonMonotonicTime { prev: i64, got: i64 },
    #[error("invalid detection params: {0}")]
    InvalidParams(String),
    #[error("maximal clique enumeration exceeded the limit of {limit} cliques")]
    CliqueLimit { limit: usize },
}

/// Positions of every object present at one aligned grid timestamp.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeSlice {
    pub t: i64,
    pub positions: BTreeMap<ObjectId, (f64, f64)>,
}

impl TimeSlice {
    pub fn new(t: i64) -> Self {
        TimeSlice { t, positions: BTreeMap::new() }
    }

    pub fn with_positions<I, K>(t: i64, it: I) -> Self
    where
        I: IntoIterator<Item = (K, (f64, f64))>,
        K: Into<ObjectId>,
    {
        TimeSlice { t, positions: it.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }

    pub fn insert(&mut self, id: ObjectId, lon: f64, lat: f64) {
        self.positions.insert(id, (lon, lat));
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Cluster type. Serialised as `1` (clique) or `2` (connected subgraph).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ClusterKind {
    Clique = 1,
    Connected = 2,
}

impl ClusterKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ClusterKind::Clique),
            2 => Some(ClusterKind::Connected),
            _ => None,
        }
    }
}

impl From<ClusterKind> for u8 {
    fn from(k: ClusterKind) -> u8 {
        k.code()
    }
}

impl TryFrom<u8> for ClusterKind {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        ClusterKind::from_code(v).ok_or_else(|| format!("cluster type must be 1 or 2, got {v}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mc,
    Mcs,
    #[default]
    Both,
}

impl Mode {
    pub fn kinds(self) -> &'static [ClusterKind] {
        match self {
            Mode::Mc => &[ClusterKind::Clique],
            Mode::Mcs => &[ClusterKind::Connected],
            Mode::Both => &[ClusterKind::Clique, ClusterKind::Connected],
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(Mode::Mc),
            "mcs" => Ok(Mode::Mcs),
            "both" => Ok(Mode::Both),
            other => Err(format!("unknown mode {other:?} (expected mc, mcs or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Minimum cardinality.
    pub c: usize,
    /// Maximum pairwise distance in metres.
    pub theta: f64,
    /// Minimum lifetime in consecutive timeslices.
    pub d: usize,
    pub mode: Mode,
    /// Also report patterns the moment they first reach `d` slices.
    #[serde(default)]
    pub progressive: bool,
    #[serde(default = "default_clique_limit")]
    pub clique_limit: usize,
}

fn default_clique_limit() -> usize {
    DEFAULT_CLIQUE_LIMIT
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams { c: 3, theta: 1500.0, d: 3, mode: Mode::Both, progressive: false, clique_limit: DEFAULT_CLIQUE_LIMIT }
    }
}

impl DetectionParams {
    pub fn new(c: usize, theta: f64, d: usize, mode: Mode) -> Result<Self, DetectError> {
        let p = DetectionParams { c, theta, d, mode, ..DetectionParams::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if self.c < 2 {
            return Err(DetectError::InvalidParams(format!("c must be at least 2, got {}", self.c)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(DetectError::InvalidParams(format!("theta must be positive, got {}", self.theta)));
        }
        if self.d < 1 {
            return Err(DetectError::InvalidParams("d must be at least 1".into()));
        }
        if self.clique_limit == 0 {
            return Err(DetectError::InvalidParams("clique_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Sorted, duplicate-free set of object ids.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Members(Vec<ObjectId>);

impl Members {
    pub fn new<I, K>(ids: I) -> Self
    where
        I: IntoIterator<Item = K>,
        K: Into<ObjectId>,
    {
        let mut v: Vec<ObjectId> = ids.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        Members(v)
    }

    pub(crate) fn from_sorted(v: Vec<ObjectId>) -> Self {
        debug_assert!(v.windows(2).all(|w| w[0] < w[1]));
        Members(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ObjectId> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[ObjectId] {
        &self.0
    }

    pub fn contains(&self, id: &ObjectId) -> bool {
        self.0.binary_search(id).is_ok()
    }

    pub fn intersection(&self, other: &Members) -> Members {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.0[i].clone());
                    i += 1;
                    j += 1;
                }
            }
        }
        Members(out)
    }

    pub fn intersection_len(&self, other: &Members) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn is_subset(&self, other: &Members) -> bool {
        self.len() <= other.len() && self.intersection_len(other) == self.len()
    }

    /// `a;b;c`
    pub fn joined(&self) -> String {
        self.0.iter().map(|id| id.as_str()).collect::<Vec<_>>().join(";")
    }

    pub fn parse_joined(s: &str) -> Members {
        Members::new(s.split(';').map(str::trim).filter(|x| !x.is_empty()))
    }
}

impl fmt::Debug for Members {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.joined())
    }
}

impl<'a> IntoIterator for &'a Members {
    type Item = &'a ObjectId;
    type IntoIter = std::slice::Iter<'a, ObjectId>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Output tuple: members, first and last grid timestamp, type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvolvingCluster {
    pub members: Members,
    pub t_start: i64,
    pub t_end: i64,
    pub tp: ClusterKind,
}

impl EvolvingCluster {
    /// Number of grid slices covered.
    pub fn slices(&self, align_rate: i64) -> usize {
        ((self.t_end - self.t_start) / align_rate) as usize + 1
    }
}

/// Canonical order: members, then start, end and type.
pub fn sort_canonical(clusters: &mut [EvolvingCluster]) {
    clusters.sort();
}
