//! Similarity between predicted and actual evolving clusters, greedy
//! best-match assignment and summary statistics.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolving::{ClusterKind, EvolvingCluster, Members, TimeSlice};
use crate::exec::Execution;
use crate::geo::{interval_iou, mbr_iou, Mbr, ObjectId, TimeInterval};
use crate::stats::Distribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid similarity weights: {0}")]
    InvalidWeights(String),
    #[error("no position for object {object} at t={t}")]
    MissingPosition { object: ObjectId, t: i64 },
    #[error("align_rate must be positive, got {0}")]
    InvalidRate(i64),
}

/// Weights of the spatial, temporal and membership terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimWeights {
    pub spatial: f64,
    pub temporal: f64,
    pub member: f64,
}

impl Default for SimWeights {
    fn default() -> Self {
        SimWeights { spatial: 1.0 / 3.0, temporal: 1.0 / 3.0, member: 1.0 / 3.0 }
    }
}

impl SimWeights {
    pub fn new(spatial: f64, temporal: f64, member: f64) -> Result<Self, EvalError> {
        let w = SimWeights { spatial, temporal, member };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, v) in [("spatial", self.spatial), ("temporal", self.temporal), ("member", self.member)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(EvalError::InvalidWeights(format!("each weight must lie in (0, 1); {name} weight is {v}")));
            }
        }
        let sum = self.spatial + self.temporal + self.member;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EvalError::InvalidWeights(format!("weights must sum to 1 (within 1e-9), got {sum}")));
        }
        Ok(())
    }
}

impl FromStr for SimWeights {
    type Err = EvalError;
    /// `l1,l2,l3`
    fn from_str(s: &str) -> Result<Self, EvalError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(EvalError::InvalidWeights(format!("expected three comma-separated weights, got {s:?}")));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| EvalError::InvalidWeights(format!("not a number: {p:?}")))?;
        }
        SimWeights::new(v[0], v[1], v[2])
    }
}

/// Region compared by the spatial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialScope {
    /// One box over all member positions across the whole lifetime.
    #[default]
    Lifetime,
    /// Mean IoU of per-slice boxes over the shared timestamps.
    PerSlice,
}

/// Timeslices keyed by grid timestamp, the position source for boxes.
pub type SliceMap = BTreeMap<i64, TimeSlice>;

fn slice_mbr(c: &EvolvingCluster, slices: &SliceMap, t: i64) -> Result<Mbr, EvalError> {
    let missing = |object: &ObjectId| EvalError::MissingPosition { object: object.clone(), t };
    let slice = slices.get(&t).ok_or_else(|| missing(&c.members.as_slice()[0]))?;
    let mut mbr: Option<Mbr> = None;
    for id in &c.members {
        let &(lon, lat) = slice.positions.get(id).ok_or_else(|| missing(id))?;
        match &mut mbr {
            Some(m) => m.expand(lon, lat),
            None => mbr = Some(Mbr::point(lon, lat)),
        }
    }
    Ok(mbr.expect("clusters have members"))
}

/// Box around every member position over the cluster's lifetime.
pub fn cluster_mbr(c: &EvolvingCluster, slices: &SliceMap, align_rate: i64) -> Result<Mbr, EvalError> {
    if align_rate <= 0 {
        return Err(EvalError::InvalidRate(align_rate));
    }
    let mut t = c.t_start;
    let mut mbr = slice_mbr(c, slices, t)?;
    while t < c.t_end {
        t += align_rate;
        mbr = mbr.union(&slice_mbr(c, slices, t)?);
    }
    Ok(mbr)
}

pub fn sim_spatial(a: &Mbr, b: &Mbr) -> f64 {
    mbr_iou(a, b)
}

/// Mean per-slice box IoU over the grid timestamps both clusters cover;
/// 0 without shared timestamps.
pub fn sim_spatial_per_slice(
    pred: &EvolvingCluster,
    pred_slices: &SliceMap,
    act: &EvolvingCluster,
    act_slices: &SliceMap,
    align_rate: i64,
) -> Result<f64, EvalError> {
    if align_rate <= 0 {
        return Err(EvalError::InvalidRate(align_rate));
    }
    let (lo, hi) = (pred.t_start.max(act.t_start), pred.t_end.min(act.t_end));
    let mut t = lo;
    let (mut sum, mut n) = (0.0, 0usize);
    while t <= hi {
        sum += mbr_iou(&slice_mbr(pred, pred_slices, t)?, &slice_mbr(act, act_slices, t)?);
        n += 1;
        t += align_rate;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn lifetime(c: &EvolvingCluster) -> TimeInterval {
    TimeInterval { start: c.t_start as f64, end: c.t_end as f64 }
}

pub fn sim_temporal(a: &EvolvingCluster, b: &EvolvingCluster) -> f64 {
    interval_iou(&lifetime(a), &lifetime(b))
}

/// Jaccard index of the member sets.
pub fn sim_member(a: &Members, b: &Members) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Weighted sum of the three terms, or 0 when the lifetimes do not overlap.
pub fn sim_overall(spatial: f64, temporal: f64, member: f64, w: &SimWeights) -> f64 {
    if temporal > 0.0 {
        (w.spatial * spatial + w.temporal * temporal + w.member * member).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Clusters together with the slices holding their members' positions.
#[derive(Debug, Clone, Copy)]
pub struct ClusterSet<'a> {
    pub clusters: &'a [EvolvingCluster],
    pub slices: &'a SliceMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub weights: SimWeights,
    pub spatial: SpatialScope,
    pub align_rate: i64,
    #[serde(default)]
    pub execution: Execution,
}

impl MatchOptions {
    pub fn new(weights: SimWeights, align_rate: i64) -> Self {
        MatchOptions { weights, spatial: SpatialScope::Lifetime, align_rate, execution: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub predicted: EvolvingCluster,
    pub actual: EvolvingCluster,
    pub sim_spatial: f64,
    pub sim_temporal: f64,
    pub sim_member: f64,
    pub sim_star: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchPair>,
    pub unmatched_predicted: Vec<EvolvingCluster>,
}

/// Similarity terms of one (predicted, actual) pair.
pub fn pair_similarity(
    pred: &EvolvingCluster,
    pred_set: ClusterSet<'_>,
    act: &EvolvingCluster,
    act_set: ClusterSet<'_>,
    opts: &MatchOptions,
) -> Result<(f64, f64, f64, f64), EvalError> {
    let spatial = match opts.spatial {
        SpatialScope::Lifetime => sim_spatial(
            &cluster_mbr(pred, pred_set.slices, opts.align_rate)?,
            &cluster_mbr(act, act_set.slices, opts.align_rate)?,
        ),
        SpatialScope::PerSlice => sim_spatial_per_slice(pred, pred_set.slices, act, act_set.slices, opts.align_rate)?,
    };
    let temporal = sim_temporal(pred, act);
    let member = sim_member(&pred.members, &act.members);
    Ok((spatial, temporal, member, sim_overall(spatial, temporal, member, &opts.weights)))
}

/// `a` is a better match than `b`: higher Sim*, then earlier actual start,
/// then lexicographically smaller member set, then earlier end.
fn better(a: &MatchPair, b: &MatchPair) -> bool {
    if a.sim_star != b.sim_star {
        return a.sim_star > b.sim_star;
    }
    (a.actual.t_start, &a.actual.members, a.actual.t_end) < (b.actual.t_start, &b.actual.members, b.actual.t_end)
}

/// For each predicted cluster, the actual cluster of the same type with the
/// highest Sim*. Predicted clusters whose best Sim* is 0 are unmatched.
pub fn cluster_matching(pred: ClusterSet<'_>, act: ClusterSet<'_>, opts: &MatchOptions) -> Result<MatchReport, EvalError> {
    opts.weights.validate()?;
    if opts.align_rate <= 0 {
        return Err(EvalError::InvalidRate(opts.align_rate));
    }
    let lifetime_boxes = |set: ClusterSet<'_>| -> Result<Vec<Option<Mbr>>, EvalError> {
        if opts.spatial != SpatialScope::Lifetime {
            return Ok(vec![None; set.clusters.len()]);
        }
        opts.execution.map(set.clusters, |c| cluster_mbr(c, set.slices, opts.align_rate).map(Some)).into_iter().collect()
    };
    let pred_boxes = lifetime_boxes(pred)?;
    let act_boxes = lifetime_boxes(act)?;

    let mut by_kind: BTreeMap<ClusterKind, Vec<usize>> = BTreeMap::new();
    for (j, a) in act.clusters.iter().enumerate() {
        by_kind.entry(a.tp).or_default().push(j);
    }

    let idx: Vec<usize> = (0..pred.clusters.len()).collect();
    let best = opts.execution.map(&idx, |&i| -> Result<Option<MatchPair>, EvalError> {
        let p = &pred.clusters[i];
        let mut best: Option<MatchPair> = None;
        for &j in by_kind.get(&p.tp).map(Vec::as_slice).unwrap_or(&[]) {
            let a = &act.clusters[j];
            let temporal = sim_temporal(p, a);
            if temporal == 0.0 && best.is_some() {
                continue;
            }
            let spatial = match (&pred_boxes[i], &act_boxes[j]) {
                (Some(pb), Some(ab)) => sim_spatial(pb, ab),
                _ if temporal == 0.0 => 0.0,
                _ => sim_spatial_per_slice(p, pred.slices, a, act.slices, opts.align_rate)?,
            };
            let member = sim_member(&p.members, &a.members);
            let cand = MatchPair {
                predicted: p.clone(),
                actual: a.clone(),
                sim_spatial: spatial,
                sim_temporal: temporal,
                sim_member: member,
                sim_star: sim_overall(spatial, temporal, member, &opts.weights),
            };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        Ok(best.filter(|b| b.sim_star > 0.0))
    });

    let mut report = MatchReport::default();
    for (i, b) in best.into_iter().enumerate() {
        match b? {
            Some(pair) => report.pairs.push(pair),
            None => report.unmatched_predicted.push(pred.clusters[i].clone()),
        }
    }
    Ok(report)
}

/// Distribution of each similarity measure over the matched pairs. Every
/// field is `None` for an empty report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub pairs: usize,
    pub unmatched_predicted: usize,
    pub sim_spatial: Option<Distribution>,
    pub sim_temporal: Option<Distribution>,
    pub sim_member: Option<Distribution>,
    pub sim_star: Option<Distribution>,
}

pub fn summarize(report: &MatchReport) -> MatchSummary {
    let col = |f: fn(&MatchPair) -> f64| Distribution::of(&report.pairs.iter().map(f).collect::<Vec<_>>());
    MatchSummary {
        pairs: report.pairs.len(),
        unmatched_predicted: report.unmatched_predicted.len(),
        sim_spatial: col(|p| p.sim_spatial),
        sim_temporal: col(|p| p.sim_temporal),
        sim_member: col(|p| p.sim_member),
        sim_star: col(|p| p.sim_star),
    }
}
