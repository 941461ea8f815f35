use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;

use super::graph::{build_proximity_graph_with, maximal_components, Groups};
use super::{ClusterKind, DetectError, DetectionParams, EvolvingCluster, Members, TimeSlice};

/// A pattern still alive at the most recent slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivePattern {
    pub members: Members,
    pub t_start: i64,
    pub last_seen: i64,
    pub tp: ClusterKind,
    reported: bool,
}

impl ActivePattern {
    fn slices(&self, align_rate: i64) -> usize {
        ((self.last_seen - self.t_start) / align_rate) as usize + 1
    }

    fn to_cluster(&self) -> EvolvingCluster {
        EvolvingCluster { members: self.members.clone(), t_start: self.t_start, t_end: self.last_seen, tp: self.tp }
    }
}

/// Detection state for one stream. Single owner, strictly increasing slices.
#[derive(Debug, Clone)]
pub struct EvolvingClusters {
    params: DetectionParams,
    align_rate: i64,
    exec: Execution,
    last_t: Option<i64>,
    cliques: Vec<ActivePattern>,
    components: Vec<ActivePattern>,
    provisional: Vec<EvolvingCluster>,
}

impl EvolvingClusters {
    pub fn new(params: DetectionParams, align_rate: i64) -> Result<Self, DetectError> {
        params.validate()?;
        if align_rate <= 0 {
            return Err(DetectError::InvalidParams("align_rate must be positive".into()));
        }
        Ok(EvolvingClusters {
            params,
            align_rate,
            exec: Execution::default(),
            last_t: None,
            cliques: Vec::new(),
            components: Vec::new(),
            provisional: Vec::new(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn params(&self) -> &DetectionParams {
        &self.params
    }

    pub fn align_rate(&self) -> i64 {
        self.align_rate
    }

    pub fn last_t(&self) -> Option<i64> {
        self.last_t
    }

    pub fn active(&self) -> impl Iterator<Item = &ActivePattern> {
        self.cliques.iter().chain(self.components.iter())
    }

    /// Provisional reports collected in progressive mode since the last call.
    pub fn drain_provisional(&mut self) -> Vec<EvolvingCluster> {
        std::mem::take(&mut self.provisional)
    }

    /// Processes one slice and returns the patterns that ended with it.
    pub fn step(&mut self, ts: &TimeSlice) -> Result<Vec<EvolvingCluster>, DetectError> {
        self.check_time(ts.t)?;
        let graph = build_proximity_graph_with(ts, self.params.theta, self.exec);
        let groups = maximal_components(&graph, self.params.c, self.params.clique_limit)?;
        self.step_groups(ts.t, &groups)
    }

    fn check_time(&self, t: i64) -> Result<(), DetectError> {
        match self.last_t {
            Some(prev) if t <= prev => Err(DetectError::NonMonotonicTime { prev, got: t }),
            _ => Ok(()),
        }
    }

    /// Maintenance step over precomputed groups of the slice at `t`.
    pub fn step_groups(&mut self, t: i64, groups: &Groups) -> Result<Vec<EvolvingCluster>, DetectError> {
        self.check_time(t)?;
        let contiguous = self.last_t == Some(t - self.align_rate);
        let mut emitted = Vec::new();
        for &kind in self.params.mode.kinds() {
            let current = match kind {
                ClusterKind::Clique => &groups.cliques,
                ClusterKind::Connected => &groups.components,
            };
            let previous = std::mem::take(self.patterns_mut(kind));
            let next = self.advance(kind, t, contiguous, &previous, current);
            for p in &previous {
                let continued = contiguous && next.iter().any(|n| n.members == p.members);
                if !continued && p.slices(self.align_rate) >= self.params.d {
                    emitted.push(p.to_cluster());
                }
            }
            *self.patterns_mut(kind) = next;
        }
        self.last_t = Some(t);
        if self.params.progressive {
            self.collect_provisional();
        }
        emitted.sort();
        Ok(emitted)
    }

    fn patterns_mut(&mut self, kind: ClusterKind) -> &mut Vec<ActivePattern> {
        match kind {
            ClusterKind::Clique => &mut self.cliques,
            ClusterKind::Connected => &mut self.components,
        }
    }

    fn advance(
        &self,
        kind: ClusterKind,
        t: i64,
        contiguous: bool,
        previous: &[ActivePattern],
        current: &[Members],
    ) -> Vec<ActivePattern> {
        let c = self.params.c;
        // member set -> earliest start (and whether it was already reported)
        let mut candidates: BTreeMap<Members, (i64, bool)> = BTreeMap::new();
        if contiguous {
            for p in previous {
                for g in current {
                    if p.members.intersection_len(g) < c {
                        continue;
                    }
                    let inter = p.members.intersection(g);
                    let reported = p.reported && inter == p.members;
                    candidates
                        .entry(inter)
                        .and_modify(|e| {
                            if p.t_start < e.0 {
                                *e = (p.t_start, reported);
                            } else if p.t_start == e.0 {
                                e.1 |= reported;
                            }
                        })
                        .or_insert((p.t_start, reported));
                }
            }
        }
        for g in current {
            candidates.entry(g.clone()).or_insert((t, false));
        }

        // drop sets strictly contained in another set with the same start
        let mut by_start: BTreeMap<i64, Vec<&Members>> = BTreeMap::new();
        for (m, (s, _)) in &candidates {
            by_start.entry(*s).or_default().push(m);
        }
        candidates
            .iter()
            .filter(|(m, (s, _))| !by_start[s].iter().any(|other| other.len() > m.len() && m.is_subset(other)))
            .map(|(m, &(s, reported))| ActivePattern { members: m.clone(), t_start: s, last_seen: t, tp: kind, reported })
            .collect()
    }

    fn collect_provisional(&mut self) {
        let (d, rate) = (self.params.d, self.align_rate);
        let mut fresh = Vec::new();
        for p in self.cliques.iter_mut().chain(self.components.iter_mut()) {
            if !p.reported && p.slices(rate) >= d {
                p.reported = true;
                fresh.push(p.to_cluster());
            }
        }
        fresh.sort();
        self.provisional.extend(fresh);
    }

    /// Ends the stream: emits every active pattern that is long enough.
    /// Calling it again returns nothing.
    pub fn flush(&mut self) -> Vec<EvolvingCluster> {
        let rate = self.align_rate;
        let d = self.params.d;
        let mut out: Vec<EvolvingCluster> = self
            .cliques
            .drain(..)
            .chain(self.components.drain(..))
            .filter(|p| p.slices(rate) >= d)
            .map(|p| p.to_cluster())
            .collect();
        out.sort();
        out
    }
}

/// Whole-batch detection: groups for every slice are extracted up front
/// (data-parallel), then maintained in time order. Gives the same emissions
/// as feeding the slices one at a time and flushing.
pub fn detect_batch(
    slices: &[TimeSlice],
    params: &DetectionParams,
    align_rate: i64,
    exec: Execution,
) -> Result<Vec<EvolvingCluster>, DetectError> {
    let mut order: Vec<&TimeSlice> = slices.iter().collect();
    order.sort_by_key(|s| s.t);
    if let Some(w) = order.windows(2).find(|w| w[0].t == w[1].t) {
        return Err(DetectError::NonMonotonicTime { prev: w[0].t, got: w[1].t });
    }
    let groups = exec.map(&order, |ts| {
        let graph = build_proximity_graph_with(ts, params.theta, Execution::Sequential);
        maximal_components(&graph, params.c, params.clique_limit)
    });
    let mut det = EvolvingClusters::new(params.clone(), align_rate)?;
    let mut out = Vec::new();
    for (ts, g) in order.iter().zip(groups) {
        out.extend(det.step_groups(ts.t, &g?)?);
    }
    out.extend(det.flush());
    Ok(out)
}
