use rand::Rng as _;

use super::{stratified_masks, CsrGraph};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Stochastic block model with `num_blocks` planted communities.
///
/// Blocks occupy contiguous id ranges (the first `n % b` blocks get one extra
/// node); labels are block ids and the split masks are a 60/20/20 stratified
/// split. Each node pair inside a block is joined with probability `p_in`,
/// each pair across blocks with `p_out`. Pairs are visited with geometric
/// skips, so the cost is linear in nodes plus edges.
pub fn generate_sbm(
    num_nodes: usize,
    num_blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<CsrGraph> {
    if num_blocks == 0 || num_blocks > num_nodes {
        return Err(Error::Graph(format!(
            "cannot place {num_nodes} nodes in {num_blocks} blocks"
        )));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Graph(format!("{name} = {p} is not a probability")));
        }
    }
    if p_in < p_out {
        return Err(Error::Graph(format!(
            "p_in ({p_in}) must not be below p_out ({p_out})"
        )));
    }
    let base = num_nodes / num_blocks;
    let extra = num_nodes % num_blocks;
    let mut starts = Vec::with_capacity(num_blocks + 1);
    starts.push(0);
    for b in 0..num_blocks {
        starts.push(starts[b] + base + usize::from(b < extra));
    }
    let mut labels = vec![0usize; num_nodes];
    for b in 0..num_blocks {
        labels[starts[b]..starts[b + 1]].fill(b);
    }

    let mut rng = rng::seeded(seed);
    let mut edges = Vec::new();
    for a in 0..num_blocks {
        for u in starts[a]..starts[a + 1] {
            // same block, partners after u
            sample_run(u, u + 1, starts[a + 1], p_in, &mut rng, &mut edges);
            // later blocks
            sample_run(u, starts[a + 1], num_nodes, p_out, &mut rng, &mut edges);
        }
    }
    let masks = stratified_masks(&labels, 0.6, 0.2, seed);
    CsrGraph::from_edges(num_nodes, &edges)?
        .with_labels(labels)?
        .with_masks(masks)
}

fn sample_run(u: usize, from: usize, to: usize, p: f64, rng: &mut Rng, edges: &mut Vec<(usize, usize)>) {
    if p <= 0.0 || from >= to {
        return;
    }
    if p >= 1.0 {
        edges.extend((from..to).map(|v| (u, v)));
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut v = from;
    loop {
        let r: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let skip = (r.ln() / log_q).floor();
        if skip >= (to - v) as f64 {
            break;
        }
        v += skip as usize;
        edges.push((u, v));
        v += 1;
        if v >= to {
            break;
        }
    }
}
