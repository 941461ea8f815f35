//! Per-slice proximity graph, connected components and maximal cliques.

use crate::exec::Execution;
use crate::geo::{haversine_m, ObjectId};

use super::{DetectError, Members, TimeSlice};

/// Fixed-width bit set over vertex indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(n: usize) -> Self {
        BitSet { words: vec![0; n.div_ceil(64)] }
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn and(&self, other: &BitSet) -> BitSet {
        BitSet { words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect() }
    }

    pub fn and_not(&self, other: &BitSet) -> BitSet {
        BitSet { words: self.words.iter().zip(&other.words).map(|(a, b)| a & !b).collect() }
    }

    pub fn or(&self, other: &BitSet) -> BitSet {
        BitSet { words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect() }
    }

    pub fn and_count(&self, other: &BitSet) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Undirected graph over the objects of one timeslice. Vertex `i` is
/// `ids[i]`; ids are sorted.
#[derive(Debug, Clone)]
pub struct ProximityGraph {
    pub ids: Vec<ObjectId>,
    adj: Vec<BitSet>,
}

impl ProximityGraph {
    /// Builds a graph directly from an edge list (tests and oracles).
    pub fn from_edges(ids: Vec<ObjectId>, edges: &[(usize, usize)]) -> Self {
        let n = ids.len();
        let mut adj = vec![BitSet::new(n); n];
        for &(a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        ProximityGraph { ids, adj }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(b)
    }

    pub fn neighbors(&self, v: usize) -> &BitSet {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].count()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BitSet::count).sum::<usize>() / 2
    }

    fn members(&self, vertices: &[usize]) -> Members {
        // vertex order equals id order, so sorted indices give sorted ids
        Members::from_sorted(vertices.iter().map(|&v| self.ids[v].clone()).collect())
    }

    /// Connected components as sorted vertex lists, in order of their
    /// smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for u in self.adj[v].iter() {
                    if !seen[u] {
                        seen[u] = true;
                        comp.push(u);
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Vertices in degeneracy order (repeatedly remove a minimum-degree vertex).
    fn degeneracy_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut degree: Vec<usize> = (0..n).map(|v| self.degree(v)).collect();
        let max_deg = degree.iter().copied().max().unwrap_or(0);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); max_deg + 1];
        for v in 0..n {
            buckets[degree[v]].push(v);
        }
        let mut removed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut d = 0;
        while order.len() < n {
            d = d.min(max_deg);
            while buckets[d].is_empty() {
                d += 1;
            }
            let v = buckets[d].pop().unwrap();
            if removed[v] || degree[v] != d {
                continue;
            }
            removed[v] = true;
            order.push(v);
            for u in self.adj[v].iter() {
                if !removed[u] {
                    degree[u] -= 1;
                    buckets[degree[u]].push(u);
                }
            }
            d = d.saturating_sub(1);
        }
        order
    }

    /// Maximal cliques with at least `min_size` vertices (pivoting
    /// Bron–Kerbosch over a degeneracy order). Errors out after `limit`
    /// cliques.
    pub fn maximal_cliques(&self, min_size: usize, limit: usize) -> Result<Vec<Vec<usize>>, DetectError> {
        let n = self.len();
        let mut out = Vec::new();
        let order = self.degeneracy_order();
        let mut position = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            position[v] = i;
        }
        for &v in &order {
            let mut later = BitSet::new(n);
            let mut earlier = BitSet::new(n);
            for u in self.adj[v].iter() {
                if position[u] > position[v] {
                    later.insert(u);
                } else {
                    earlier.insert(u);
                }
            }
            let mut r = vec![v];
            self.expand(&mut r, later, earlier, min_size, limit, &mut out)?;
        }
        for c in &mut out {
            c.sort_unstable();
        }
        out.sort();
        Ok(out)
    }

    fn expand(
        &self,
        r: &mut Vec<usize>,
        mut p: BitSet,
        mut x: BitSet,
        min_size: usize,
        limit: usize,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<(), DetectError> {
        if p.is_empty() {
            if x.is_empty() && r.len() >= min_size {
                if out.len() >= limit {
                    return Err(DetectError::CliqueLimit { limit });
                }
                out.push(r.clone());
            }
            return Ok(());
        }
        if r.len() + p.count() < min_size {
            return Ok(());
        }
        let pivot = p
            .or(&x)
            .iter()
            .max_by_key(|&u| (p.and_count(&self.adj[u]), std::cmp::Reverse(u)))
            .expect("p is non-empty");
        let candidates: Vec<usize> = p.and_not(&self.adj[pivot]).iter().collect();
        for v in candidates {
            r.push(v);
            self.expand(r, p.and(&self.adj[v]), x.and(&self.adj[v]), min_size, limit, out)?;
            r.pop();
            p.remove(v);
            x.insert(v);
        }
        Ok(())
    }
}

pub fn build_proximity_graph(ts: &TimeSlice, theta: f64) -> ProximityGraph {
    build_proximity_graph_with(ts, theta, Execution::default())
}

/// Edge `(u, v)` iff the great-circle distance is at most `theta` metres.
/// Rows of the all-pairs scan run in parallel under [`Execution::Parallel`].
pub fn build_proximity_graph_with(ts: &TimeSlice, theta: f64, exec: Execution) -> ProximityGraph {
    let ids: Vec<ObjectId> = ts.positions.keys().cloned().collect();
    let pos: Vec<(f64, f64)> = ts.positions.values().copied().collect();
    let n = ids.len();
    let rows = exec.map_range(n, |i| {
        let (lon_i, lat_i) = pos[i];
        (i + 1..n).filter(|&j| haversine_m(lon_i, lat_i, pos[j].0, pos[j].1) <= theta).collect::<Vec<_>>()
    });
    let mut adj = vec![BitSet::new(n); n];
    for (i, row) in rows.into_iter().enumerate() {
        for j in row {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    ProximityGraph { ids, adj }
}

/// Groups of one slice with at least `c` members, canonically sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Groups {
    pub cliques: Vec<Members>,
    pub components: Vec<Members>,
}

pub fn maximal_components(graph: &ProximityGraph, c: usize, clique_limit: usize) -> Result<Groups, DetectError> {
    let mut components: Vec<Members> =
        graph.components().into_iter().filter(|comp| comp.len() >= c).map(|comp| graph.members(&comp)).collect();
    components.sort();
    let mut cliques: Vec<Members> =
        graph.maximal_cliques(c, clique_limit)?.into_iter().map(|cl| graph.members(&cl)).collect();
    cliques.sort();
    Ok(Groups { cliques, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::offset_degrees;

    fn ids(n: usize) -> Vec<ObjectId> {
        (0..n).map(|i| ObjectId::new(format!("{}", (b'a' + i as u8) as char))).collect()
    }

    #[test]
    fn bitset_basics() {
        let mut b = BitSet::new(130);
        for i in [0, 63, 64, 129] {
            b.insert(i);
        }
        assert_eq!(b.iter().collect::<Vec<_>>(), vec![0, 63, 64, 129]);
        assert_eq!(b.count(), 4);
        b.remove(64);
        assert!(!b.contains(64));
    }

    #[test]
    fn distance_threshold() {
        let (dlon, _) = offset_degrees(0.0, 1000.0, 0.0);
        let near = TimeSlice::with_positions(0, [("a", (0.0, 0.0)), ("b", (dlon, 0.0))]);
        assert_eq!(build_proximity_graph(&near, 1500.0).edge_count(), 1);
        let far = TimeSlice::with_positions(0, [("a", (0.0, 0.0)), ("b", (2.0 * dlon, 0.0))]);
        let g = build_proximity_graph(&far, 1500.0);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn triangle_and_path() {
        let tri = ProximityGraph::from_edges(ids(3), &[(0, 1), (1, 2), (0, 2)]);
        let g = maximal_components(&tri, 3, 100).unwrap();
        assert_eq!(g.cliques, vec![Members::new(["a", "b", "c"])]);
        assert_eq!(g.components, vec![Members::new(["a", "b", "c"])]);

        let path = ProximityGraph::from_edges(ids(3), &[(0, 1), (1, 2)]);
        let g = maximal_components(&path, 3, 100).unwrap();
        assert!(g.cliques.is_empty());
        assert_eq!(g.components, vec![Members::new(["a", "b", "c"])]);
    }

    #[test]
    fn clique_limit_is_an_error() {
        // complement of a perfect matching on 12 vertices has 2^6 maximal cliques
        let n = 12;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if !(a % 2 == 0 && b == a + 1) {
                    edges.push((a, b));
                }
            }
        }
        let g = ProximityGraph::from_edges(ids(n), &edges);
        assert_eq!(g.maximal_cliques(2, 1000).unwrap().len(), 64);
        assert_eq!(g.maximal_cliques(2, 10), Err(DetectError::CliqueLimit { limit: 10 }));
    }

    #[test]
    fn sequential_and_parallel_graphs_agree() {
        let mut ts = TimeSlice::new(0);
        for i in 0..200 {
            let (dlon, dlat) = offset_degrees(37.0, (i % 20) as f64 * 700.0, (i / 20) as f64 * 900.0);
            ts.insert(ObjectId::new(format!("o{i:03}")), 23.0 + dlon, 37.0 + dlat);
        }
        let a = build_proximity_graph_with(&ts, 1500.0, Execution::Sequential);
        let b = build_proximity_graph_with(&ts, 1500.0, Execution::Parallel);
        assert_eq!(a.adj, b.adj);
    }
}
