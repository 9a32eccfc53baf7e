//! Multilevel k-way partitioning by recursive bisection.
//!
//! Each bisection coarsens the graph with heavy-edge matching, grows an
//! initial split on the coarsest graph from several random seeds, then
//! projects back level by level with Fiduccia-Mattheyses refinement. A final
//! pass moves boundary vertices out of any part that is still over its cap.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::CsrGraph;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionOptions {
    /// Allowed excess over `ceil(n / k)` for the largest part.
    pub imbalance: f64,
    pub seed: u64,
    /// Stop coarsening once a level has at most this many vertices.
    pub coarsen_to: usize,
    pub refine_passes: usize,
    pub initial_tries: usize,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        PartitionOptions {
            imbalance: 0.05,
            seed: 0,
            coarsen_to: 40,
            refine_passes: 8,
            initial_tries: 8,
        }
    }
}

impl PartitionOptions {
    pub fn with_seed(seed: u64) -> Self {
        PartitionOptions {
            seed,
            ..Default::default()
        }
    }

    /// Largest admissible part for `n` nodes in `k` parts.
    pub fn part_cap(&self, n: usize, k: usize) -> usize {
        let even = n.div_ceil(k);
        (((1.0 + self.imbalance) * even as f64).floor() as usize).max(even)
    }
}

/// Partition into `k` balanced parts with default options.
pub fn partition(graph: &CsrGraph, k: usize, seed: u64) -> Result<Vec<usize>> {
    partition_with(graph, k, &PartitionOptions::with_seed(seed))
}

pub fn partition_with(graph: &CsrGraph, k: usize, opts: &PartitionOptions) -> Result<Vec<usize>> {
    let n = graph.num_nodes();
    if k == 0 || k > n {
        return Err(Error::Partition(format!(
            "cannot split {n} nodes into {k} parts"
        )));
    }
    if !(opts.imbalance >= 0.0) {
        return Err(Error::Partition("imbalance must be non-negative".into()));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let mut rng = rng::seeded(opts.seed);
    let depth = usize::BITS - (k - 1).leading_zeros();
    let per_level = (1.0 + opts.imbalance).powf(1.0 / depth as f64) - 1.0;
    let mut parts = vec![0usize; n];
    let whole = WGraph::from_csr(graph);
    let ids: Vec<usize> = (0..n).collect();
    recurse(&whole, &ids, k, 0, per_level, opts, &mut rng, &mut parts);
    enforce_balance(graph, &mut parts, k, opts.part_cap(n, k));
    Ok(parts)
}

/// Number of undirected edges whose endpoints lie in different parts.
pub fn edge_cut(graph: &CsrGraph, parts: &[usize]) -> usize {
    graph.edges().filter(|&(u, v)| parts[u] != parts[v]).count()
}

/// Uniformly random assignment with part sizes as equal as possible.
pub fn random_balanced_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut parts: Vec<usize> = (0..n).map(|v| v % k).collect();
    parts.shuffle(&mut rng::seeded(seed));
    parts
}

/// Weighted graph used internally during coarsening.
#[derive(Debug, Clone)]
struct WGraph {
    xadj: Vec<usize>,
    adj: Vec<usize>,
    ewgt: Vec<u64>,
    vwgt: Vec<u64>,
}

impl WGraph {
    fn from_csr(g: &CsrGraph) -> Self {
        WGraph {
            xadj: g.offsets().to_vec(),
            adj: g.neighbor_array().to_vec(),
            ewgt: vec![1; g.num_arcs()],
            vwgt: vec![1; g.num_nodes()],
        }
    }

    fn n(&self) -> usize {
        self.vwgt.len()
    }

    fn total_weight(&self) -> u64 {
        self.vwgt.iter().sum()
    }

    fn arcs(&self, v: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        (self.xadj[v]..self.xadj[v + 1]).map(move |e| (self.adj[e], self.ewgt[e]))
    }

    fn subgraph(&self, nodes: &[usize]) -> WGraph {
        let mut local = vec![usize::MAX; self.n()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut xadj = Vec::with_capacity(nodes.len() + 1);
        xadj.push(0);
        let mut adj = Vec::new();
        let mut ewgt = Vec::new();
        for &v in nodes {
            for (u, w) in self.arcs(v) {
                if local[u] != usize::MAX {
                    adj.push(local[u]);
                    ewgt.push(w);
                }
            }
            xadj.push(adj.len());
        }
        WGraph {
            xadj,
            adj,
            ewgt,
            vwgt: nodes.iter().map(|&v| self.vwgt[v]).collect(),
        }
    }

    fn cut(&self, side: &[u8]) -> u64 {
        let mut cut = 0;
        for v in 0..self.n() {
            for (u, w) in self.arcs(v) {
                if side[u] != side[v] {
                    cut += w;
                }
            }
        }
        cut / 2
    }
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    g: &WGraph,
    ids: &[usize],
    k: usize,
    first_part: usize,
    eps: f64,
    opts: &PartitionOptions,
    rng: &mut Rng,
    out: &mut [usize],
) {
    if k == 1 || g.n() == 0 {
        for &v in ids {
            out[v] = first_part;
        }
        return;
    }
    if g.n() <= k {
        for (i, &v) in ids.iter().enumerate() {
            out[v] = first_part + i;
        }
        return;
    }
    let k_left = k / 2;
    let fraction = k_left as f64 / k as f64;
    let side = bisect(g, fraction, eps, opts, rng);
    for (s, kk, offset) in [(0u8, k_left, first_part), (1u8, k - k_left, first_part + k_left)] {
        let local: Vec<usize> = (0..g.n()).filter(|&v| side[v] == s).collect();
        let sub = g.subgraph(&local);
        let sub_ids: Vec<usize> = local.iter().map(|&v| ids[v]).collect();
        recurse(&sub, &sub_ids, kk, offset, eps, opts, rng, out);
    }
}

/// Targets and caps for the two sides of a bisection.
#[derive(Debug, Clone, Copy)]
struct Balance {
    target: [f64; 2],
    cap: [u64; 2],
}

impl Balance {
    fn new(total: u64, fraction: f64, eps: f64) -> Self {
        let t0 = total as f64 * fraction;
        let t1 = total as f64 - t0;
        let cap = |t: f64| ((t * (1.0 + eps)).floor() as u64).max(t.ceil() as u64);
        Balance {
            target: [t0, t1],
            cap: [cap(t0), cap(t1)],
        }
    }

    fn overweight(&self, w: &[u64; 2]) -> u64 {
        w[0].saturating_sub(self.cap[0]) + w[1].saturating_sub(self.cap[1])
    }
}

fn bisect(g: &WGraph, fraction: f64, eps: f64, opts: &PartitionOptions, rng: &mut Rng) -> Vec<u8> {
    let total = g.total_weight();
    let balance = Balance::new(total, fraction, eps);

    // coarsen
    let mut levels: Vec<(WGraph, Vec<usize>)> = Vec::new();
    let max_vwgt = ((1.5 * total as f64 / opts.coarsen_to as f64).ceil() as u64).max(1);
    loop {
        let current = levels.last().map_or(g, |(c, _)| c);
        if current.n() <= opts.coarsen_to {
            break;
        }
        let (coarse, cmap) = coarsen(current, max_vwgt, rng);
        if coarse.n() as f64 > 0.95 * current.n() as f64 {
            break;
        }
        levels.push((coarse, cmap));
    }

    let coarsest = levels.last().map_or(g, |(c, _)| c);
    let mut side = initial_bisection(coarsest, &balance, opts, rng);

    for i in (0..levels.len()).rev() {
        let fine = if i == 0 { g } else { &levels[i - 1].0 };
        let cmap = &levels[i].1;
        side = (0..fine.n()).map(|v| side[cmap[v]]).collect();
        fm_refine(fine, &mut side, &balance, opts.refine_passes);
    }
    side
}

/// Heavy-edge matching in random visit order; returns the coarse graph and
/// the fine-to-coarse vertex map.
fn coarsen(g: &WGraph, max_vwgt: u64, rng: &mut Rng) -> (WGraph, Vec<usize>) {
    let n = g.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mate = vec![usize::MAX; n];
    for &v in &order {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut best = v;
        let mut best_w = 0;
        for (u, w) in g.arcs(v) {
            if mate[u] == usize::MAX && u != v && w > best_w && g.vwgt[u] + g.vwgt[v] <= max_vwgt {
                best = u;
                best_w = w;
            }
        }
        mate[v] = best;
        mate[best] = v;
    }
    let mut cmap = vec![usize::MAX; n];
    let mut coarse_n = 0;
    for v in 0..n {
        if cmap[v] == usize::MAX {
            cmap[v] = coarse_n;
            cmap[mate[v]] = coarse_n;
            coarse_n += 1;
        }
    }
    let mut vwgt = vec![0u64; coarse_n];
    for v in 0..n {
        vwgt[cmap[v]] += g.vwgt[v];
    }
    // merge parallel edges through a dense marker per coarse vertex
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); coarse_n];
    for v in 0..n {
        members[cmap[v]].push(v);
    }
    let mut slot = vec![usize::MAX; coarse_n];
    let mut xadj = Vec::with_capacity(coarse_n + 1);
    xadj.push(0);
    let mut adj = Vec::new();
    let mut ewgt = Vec::new();
    for c in 0..coarse_n {
        let start = adj.len();
        for &v in &members[c] {
            for (u, w) in g.arcs(v) {
                let cu = cmap[u];
                if cu == c {
                    continue;
                }
                if slot[cu] == usize::MAX || slot[cu] < start {
                    slot[cu] = adj.len();
                    adj.push(cu);
                    ewgt.push(w);
                } else {
                    ewgt[slot[cu]] += w;
                }
            }
        }
        xadj.push(adj.len());
    }
    (
        WGraph {
            xadj,
            adj,
            ewgt,
            vwgt,
        },
        cmap,
    )
}

/// Greedy graph growing from random seeds, each followed by FM refinement.
fn initial_bisection(g: &WGraph, balance: &Balance, opts: &PartitionOptions, rng: &mut Rng) -> Vec<u8> {
    let n = g.n();
    let mut best: Option<(u64, u64, Vec<u8>)> = None;
    for _ in 0..opts.initial_tries.max(1) {
        let mut side = vec![1u8; n];
        let mut w = [0u64, g.total_weight()];
        let mut gain: Vec<i64> = (0..n).map(|v| -(g.arcs(v).map(|(_, x)| x as i64).sum::<i64>())).collect();
        let mut heap: BinaryHeap<(i64, Reverse<usize>)> = BinaryHeap::new();
        let start = rng.random_range(0..n);
        heap.push((i64::MAX, Reverse(start)));
        for v in 0..n {
            heap.push((gain[v], Reverse(v)));
        }
        while (w[0] as f64) < balance.target[0] {
            let Some((gv, Reverse(v))) = heap.pop() else { break };
            if side[v] == 0 || (gv != gain[v] && gv != i64::MAX) {
                continue;
            }
            if w[0] + g.vwgt[v] > balance.cap[0] {
                continue;
            }
            side[v] = 0;
            w[0] += g.vwgt[v];
            w[1] -= g.vwgt[v];
            for (u, x) in g.arcs(v) {
                if side[u] == 1 {
                    gain[u] += 2 * x as i64;
                    heap.push((gain[u], Reverse(u)));
                }
            }
        }
        fm_refine(g, &mut side, balance, opts.refine_passes);
        let w = side_weights(g, &side);
        let key = (balance.overweight(&w), g.cut(&side));
        if best.as_ref().is_none_or(|(o, c, _)| key < (*o, *c)) {
            best = Some((key.0, key.1, side));
        }
    }
    best.expect("at least one try").2
}

fn side_weights(g: &WGraph, side: &[u8]) -> [u64; 2] {
    let mut w = [0u64; 2];
    for v in 0..g.n() {
        w[side[v] as usize] += g.vwgt[v];
    }
    w
}

/// Two-way Fiduccia-Mattheyses with rollback to the best prefix of moves.
/// States are ranked by (excess over the caps, cut).
fn fm_refine(g: &WGraph, side: &mut [u8], balance: &Balance, passes: usize) {
    let n = g.n();
    if n < 2 {
        return;
    }
    let max_stall = 50.max(n / 20);
    for _ in 0..passes {
        let mut gain = vec![0i64; n];
        for v in 0..n {
            for (u, w) in g.arcs(v) {
                gain[v] += if side[u] == side[v] { -(w as i64) } else { w as i64 };
            }
        }
        let mut heaps: [BinaryHeap<(i64, Reverse<usize>)>; 2] = [BinaryHeap::new(), BinaryHeap::new()];
        for v in 0..n {
            heaps[side[v] as usize].push((gain[v], Reverse(v)));
        }
        let mut w = side_weights(g, side);
        let mut cut = g.cut(side) as i64;
        let start_key = (balance.overweight(&w), cut);
        let mut best_key = start_key;
        let mut best_len = 0;
        let mut moves: Vec<usize> = Vec::new();
        let mut locked = vec![false; n];

        loop {
            // candidate from each side: first valid heap entry
            let mut cand: [Option<(i64, usize)>; 2] = [None, None];
            for s in 0..2 {
                while let Some(&(gv, Reverse(v))) = heaps[s].peek() {
                    if locked[v] || side[v] as usize != s || gv != gain[v] {
                        heaps[s].pop();
                        continue;
                    }
                    cand[s] = Some((gv, v));
                    break;
                }
            }
            let over = balance.overweight(&w);
            let pick = |s: usize| -> bool {
                match cand[s] {
                    None => false,
                    Some((_, v)) => {
                        let t = 1 - s;
                        let after = w[t] + g.vwgt[v];
                        // a move may not push the receiving side over its cap
                        // unless it is already the lighter, underweight side
                        after <= balance.cap[t] || (over > 0 && w[s] > balance.cap[s])
                    }
                }
            };
            let from = if over > 0 {
                if w[0] > balance.cap[0] { 0 } else { 1 }
            } else {
                match (pick(0), pick(1)) {
                    (true, true) => {
                        if cand[0].unwrap().0 >= cand[1].unwrap().0 { 0 } else { 1 }
                    }
                    (true, false) => 0,
                    (false, true) => 1,
                    (false, false) => break,
                }
            };
            let Some((gv, v)) = cand[from] else { break };
            if !pick(from) {
                // blocked by balance; retire this vertex for the pass
                locked[v] = true;
                heaps[from].pop();
                continue;
            }
            heaps[from].pop();
            let to = 1 - from;
            side[v] = to as u8;
            locked[v] = true;
            w[from] -= g.vwgt[v];
            w[to] += g.vwgt[v];
            cut -= gv;
            gain[v] = -gv;
            for (u, x) in g.arcs(v) {
                if locked[u] {
                    continue;
                }
                let delta = 2 * x as i64;
                if side[u] as usize == from {
                    gain[u] += delta;
                } else {
                    gain[u] -= delta;
                }
                heaps[side[u] as usize].push((gain[u], Reverse(u)));
            }
            moves.push(v);
            let key = (balance.overweight(&w), cut);
            if key < best_key {
                best_key = key;
                best_len = moves.len();
            } else if moves.len() - best_len > max_stall {
                break;
            }
        }
        for &v in &moves[best_len..] {
            side[v] = 1 - side[v];
        }
        if best_key >= start_key {
            break;
        }
    }
}

/// Move vertices out of parts above `cap`, choosing each time the move with
/// the smallest cut increase into a part that has room.
fn enforce_balance(graph: &CsrGraph, parts: &mut [usize], k: usize, cap: usize) {
    let n = graph.num_nodes();
    let mut size = vec![0usize; k];
    for &p in parts.iter() {
        size[p] += 1;
    }
    let mut conn = vec![0i64; k];
    while let Some(over) = (0..k).filter(|&p| size[p] > cap).max_by_key(|&p| (size[p], Reverse(p))) {
        let mut best: Option<(i64, usize, usize)> = None;
        for v in (0..n).filter(|&v| parts[v] == over) {
            for &u in graph.neighbors(v) {
                conn[parts[u]] += 1;
            }
            for q in (0..k).filter(|&q| q != over && size[q] < cap) {
                let delta = conn[q] - conn[over];
                let better = match best {
                    None => true,
                    Some((bd, bv, bq)) => {
                        delta > bd || (delta == bd && (size[q], v) < (size[bq], bv))
                    }
                };
                if better {
                    best = Some((delta, v, q));
                }
            }
            for &u in graph.neighbors(v) {
                conn[parts[u]] = 0;
            }
        }
        let Some((_, v, q)) = best else { break };
        parts[v] = q;
        size[over] -= 1;
        size[q] += 1;
    }
}
