//! Fixtures and independent checkers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use comove::evolving::{ClusterKind, EvolvingCluster, Members, TimeSlice};
use comove::geo::{haversine_m, offset_degrees};

pub const ORIGIN: (f64, f64) = (24.0, 37.0);
pub const WALK_THETA: f64 = 1500.0;
pub const WALK_RATE: i64 = 60;
/// Common eastward drift per slice, metres.
const DRIFT: f64 = 600.0;

type Layout = [(char, f64, f64); 9];

// Positions in units of theta.
const TS1: Layout = [
    ('a', 0.3, 0.0),
    ('b', 1.0, 0.3),
    ('c', 1.0, -0.3),
    ('d', 1.6, 0.3),
    ('e', 1.6, -0.3),
    ('f', 2.4, -0.6),
    ('g', 3.2, -0.9),
    ('h', 3.8, -0.6),
    ('i', 3.8, -1.2),
];
// e and f drift apart: {a..e} and {f,g,h,i} split
const TS3: Layout = [
    ('a', 0.3, 0.0),
    ('b', 1.0, 0.3),
    ('c', 1.0, -0.3),
    ('d', 1.6, 0.3),
    ('e', 1.6, -0.3),
    ('f', 2.9, -0.6),
    ('g', 3.7, -0.9),
    ('h', 4.3, -0.6),
    ('i', 4.3, -1.2),
];
// {b,c,d,e} stays connected but stops being a clique; f closes up on g,h,i
const TS5: Layout = [
    ('a', 0.3, 0.0),
    ('b', 1.0, 0.3),
    ('c', 1.0, -0.3),
    ('d', 1.9, 0.3),
    ('e', 1.9, -0.3),
    ('f', 3.6, -0.6),
    ('g', 3.9, -0.9),
    ('h', 4.0, -0.4),
    ('i', 4.1, -1.0),
];
// a breaks away
const TS6: Layout = [
    ('a', -1.0, 0.0),
    ('b', 1.0, 0.3),
    ('c', 1.0, -0.3),
    ('d', 1.9, 0.3),
    ('e', 1.9, -0.3),
    ('f', 3.6, -0.6),
    ('g', 3.9, -0.9),
    ('h', 4.0, -0.4),
    ('i', 4.1, -1.0),
];

fn realise(k: usize, layout: &Layout) -> TimeSlice {
    let t = k as i64 * WALK_RATE;
    let mut ts = TimeSlice::new(t);
    for &(id, x, y) in layout {
        let (dlon, dlat) = offset_degrees(ORIGIN.1, x * WALK_THETA + DRIFT * k as f64, y * WALK_THETA);
        ts.insert(id.to_string().into(), ORIGIN.0 + dlon, ORIGIN.1 + dlat);
    }
    ts
}

/// The nine-object example: TS1..TS6 at t = 0, 60, .., 300. The first
/// three are the observed history, the last three the forecast.
pub fn walkthrough_slices() -> Vec<TimeSlice> {
    [TS1, TS1, TS3, TS3, TS5, TS6].iter().enumerate().map(|(k, l)| realise(k, l)).collect()
}

pub fn ts(k: usize) -> i64 {
    (k as i64 - 1) * WALK_RATE
}

pub fn cl(members: &str, start: usize, end: usize, tp: u8) -> EvolvingCluster {
    EvolvingCluster {
        members: Members::new(members.chars().map(|c| c.to_string())),
        t_start: ts(start),
        t_end: ts(end),
        tp: ClusterKind::from_code(tp).unwrap(),
    }
}

/// The tuple listing given for the example (P2..P6).
pub fn walkthrough_listed() -> Vec<EvolvingCluster> {
    vec![
        cl("abcde", 1, 5, 2),
        cl("abc", 1, 5, 1),
        cl("bcde", 1, 4, 1),
        cl("ghi", 1, 5, 1),
        cl("bcde", 1, 5, 2),
        cl("fghi", 5, 6, 1),
    ]
}

/// What the continuation rule yields on the fixture.
pub fn walkthrough_derived() -> Vec<EvolvingCluster> {
    let mut v = vec![
        cl("abcdefghi", 1, 2, 2),
        cl("abcde", 1, 5, 2),
        cl("bcde", 1, 6, 2),
        cl("fghi", 1, 6, 2),
        cl("abc", 1, 5, 1),
        cl("bcde", 1, 4, 1),
        cl("ghi", 1, 6, 1),
        cl("fghi", 5, 6, 1),
    ];
    v.sort();
    v
}

/// Adjacency of one slice by brute-force pairwise distance.
pub fn adjacency(slice: &TimeSlice, theta: f64) -> (Vec<String>, Vec<Vec<bool>>) {
    let ids: Vec<String> = slice.positions.keys().map(|k| k.to_string()).collect();
    let pos: Vec<(f64, f64)> = slice.positions.values().copied().collect();
    let n = ids.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            adj[i][j] = i != j && haversine_m(pos[i].0, pos[i].1, pos[j].0, pos[j].1) <= theta;
        }
    }
    (ids, adj)
}

fn component_of(adj: &[Vec<bool>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for (u, &e) in adj[v].iter().enumerate() {
            if e && !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// Direct check of the evolving-cluster definition: at least `c` members,
/// at least `d` consecutive slices, and at every slice either pairwise
/// within `theta` (clique) or inside one connected component.
pub fn definition_violations(
    cluster: &EvolvingCluster,
    slices: &BTreeMap<i64, TimeSlice>,
    c: usize,
    theta: f64,
    d: usize,
    rate: i64,
) -> Vec<String> {
    let mut v = Vec::new();
    if cluster.members.len() < c {
        v.push(format!("{:?}: {} members < {c}", cluster.members, cluster.members.len()));
    }
    let n_slices = ((cluster.t_end - cluster.t_start) / rate + 1) as usize;
    if n_slices < d {
        v.push(format!("{:?}: {n_slices} slices < {d}", cluster.members));
    }
    let mut t = cluster.t_start;
    while t <= cluster.t_end {
        let Some(slice) = slices.get(&t) else {
            v.push(format!("{:?}: no slice at {t}", cluster.members));
            t += rate;
            continue;
        };
        let (ids, adj) = adjacency(slice, theta);
        let idx: Vec<Option<usize>> = cluster.members.iter().map(|m| ids.iter().position(|x| x == m.as_str())).collect();
        if idx.iter().any(Option::is_none) {
            v.push(format!("{:?}: member missing at {t}", cluster.members));
        } else {
            let idx: Vec<usize> = idx.into_iter().flatten().collect();
            match cluster.tp {
                ClusterKind::Clique => {
                    for (k, &a) in idx.iter().enumerate() {
                        for &b in &idx[k + 1..] {
                            if !adj[a][b] {
                                v.push(format!("{:?}: {} and {} apart at {t}", cluster.members, ids[a], ids[b]));
                            }
                        }
                    }
                }
                ClusterKind::Connected => {
                    let comp = component_of(&adj, idx[0]);
                    if idx.iter().any(|&i| !comp[i]) {
                        v.push(format!("{:?}: not connected at {t}", cluster.members));
                    }
                }
            }
        }
        t += rate;
    }
    v
}

/// Every maximal clique and every connected component with at least `c`
/// vertices, by enumerating all vertex subsets.
pub fn exhaustive_groups(n: usize, adj: &[Vec<bool>], c: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let subsets: Vec<u32> = (1u32..(1 << n)).collect();
    let is_clique = |s: u32| {
        (0..n).all(|i| s >> i & 1 == 0 || (0..n).all(|j| i == j || s >> j & 1 == 0 || adj[i][j]))
    };
    let connected = |s: u32| {
        let start = s.trailing_zeros() as usize;
        let mut seen = 1u32 << start;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for u in 0..n {
                if s >> u & 1 == 1 && seen >> u & 1 == 0 && adj[v][u] {
                    seen |= 1 << u;
                    stack.push(u);
                }
            }
        }
        seen == s
    };
    let cliques: Vec<u32> = subsets.iter().copied().filter(|&s| is_clique(s)).collect();
    let conn: Vec<u32> = subsets.iter().copied().filter(|&s| connected(s)).collect();
    let maximal = |family: &[u32]| -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = family
            .iter()
            .copied()
            .filter(|&s| s.count_ones() as usize >= c && !family.iter().any(|&o| o != s && o & s == s))
            .map(|s| (0..n).filter(|i| s >> i & 1 == 1).collect())
            .collect();
        out.sort();
        out
    };
    (maximal(&cliques), maximal(&conn))
}

/// Aligned slices keyed by time.
pub fn aligned_slices(points: Vec<comove::TimestampedPoint>, cfg: &comove::PreprocessConfig) -> BTreeMap<i64, TimeSlice> {
    let (trajs, _) = comove::io::group_trajectories(points);
    let aligned = comove::preprocess::preprocess_all(&trajs, cfg, comove::Execution::Sequential);
    comove::io::slices_from_points(aligned.iter().flat_map(|t| t.points())).expect("aligned points")
}

/// A fleet with two or three scripted convoys plus free movers: at most 50
/// objects, two hours at one-minute resolution.
pub fn convoy_scenario(seed: u64) -> comove::synth::SynthScenario {
    use comove::synth::{GroupSpec, MotionModel, SynthScenario};
    let motions = [MotionModel::Linear, MotionModel::Arc, MotionModel::RandomWalk];
    let n_groups = 2 + (seed % 2) as usize;
    let groups = (0..n_groups)
        .map(|g| GroupSpec {
            members: 3 + ((seed as usize + g) % 4),
            radius_m: 300.0 + 100.0 * g as f64,
            start: 1200.0 + 300.0 * g as f64,
            end: 5400.0 + 300.0 * g as f64,
            motion: motions[(seed as usize + g) % 3],
        })
        .collect();
    SynthScenario::new(20 + (seed % 25) as usize, 7140.0, 30.0, groups, 15.0, seed)
}

/// Random-walk fleet in a 6 km box with dropouts and the odd missing slice.
pub fn random_slices(seed: u64) -> Vec<TimeSlice> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..16);
    let steps = rng.random_range(6..20);
    let mut pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..6000.0), rng.random_range(0.0..6000.0))).collect();
    let mut out = Vec::new();
    for k in 0..steps {
        for p in &mut pos {
            p.0 += rng.random_range(-400.0..400.0);
            p.1 += rng.random_range(-400.0..400.0);
        }
        if k > 0 && rng.random_bool(0.1) {
            continue;
        }
        let mut s = TimeSlice::new(k as i64 * 60);
        for (i, &(x, y)) in pos.iter().enumerate() {
            if rng.random_bool(0.9) {
                let (dlon, dlat) = offset_degrees(ORIGIN.1, x, y);
                s.insert(format!("o{i:02}").into(), ORIGIN.0 + dlon, ORIGIN.1 + dlat);
            }
        }
        out.push(s);
    }
    out
}

pub fn jaccard(a: &Members, b: &Members) -> f64 {
    let i = a.intersection_len(b) as f64;
    i / ((a.len() + b.len()) as f64 - i)
}

/// Straight-line GRU reference used to check the library's network.
pub mod gru_ref {
    use comove::flp::{GruParams, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
        (0..m.rows).map(|r| (0..m.cols).map(|c| m.get(r, c) * v[c]).sum()).collect()
    }

    pub fn add3(a: Vec<f64>, b: Vec<f64>, c: &[f64]) -> Vec<f64> {
        a.iter().zip(&b).zip(c).map(|((x, y), z)| x + y + z).collect()
    }

    /// Straight-line reference for one cell step.
    pub fn ref_cell(x: &[f64; 4], h: &[f64], p: &GruParams) -> Vec<f64> {
        let z: Vec<f64> = add3(matvec(&p.w_xz, x), matvec(&p.w_hz, h), &p.b_z).into_iter().map(sig).collect();
        let r: Vec<f64> = add3(matvec(&p.w_xr, x), matvec(&p.w_hr, h), &p.b_r).into_iter().map(sig).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let ht: Vec<f64> = add3(matvec(&p.w_xh, x), matvec(&p.w_hh, &rh), &p.b_h).into_iter().map(f64::tanh).collect();
        (0..h.len()).map(|i| z[i] * h[i] + (1.0 - z[i]) * ht[i]).collect()
    }

    pub fn ref_forward(seq: &[[f64; 4]], p: &GruParams) -> [f64; 2] {
        let mut h = vec![0.0; p.hidden_size()];
        for x in seq {
            h = ref_cell(x, &h, p);
        }
        let q: Vec<f64> = matvec(&p.w_dense, &h).iter().zip(&p.b_dense).map(|(a, b)| (a + b).tanh()).collect();
        let y = matvec(&p.w_out, &q);
        [y[0] + p.b_out[0], y[1] + p.b_out[1]]
    }

    pub fn ref_loss(batch: &[(Vec<[f64; 4]>, [f64; 2])], p: &GruParams) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|(s, t)| {
                let y = ref_forward(s, p);
                0.5 * ((y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2))
            })
            .sum();
        total / batch.len() as f64
    }

    pub fn random_params(hidden: usize, dense: usize, seed: u64) -> GruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GruParams::init(hidden, dense, &mut rng);
        // non-zero biases so every term matters
        for (_, b) in p.blocks_mut() {
            for v in b.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    pub fn random_batch(n: usize, len: usize, seed: u64) -> Vec<(Vec<[f64; 4]>, [f64; 2])> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let seq = (0..len).map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5))).collect();
                (seq, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            })
            .collect()
    }
}
