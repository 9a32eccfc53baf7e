//! Undirected graphs in CSR form and the partition/reorder machinery used to
//! align graph locality with TT row coordinates.

pub mod hierarchy;
pub mod io;
pub mod partition;
mod sbm;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use hierarchy::{build_hierarchy, permute_level, reorder, PartitionHierarchy, PermLevel};
pub use partition::{edge_cut, partition, partition_with, random_balanced_assignment, PartitionOptions};
pub use sbm::generate_sbm;

/// Node subsets used for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn get(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn permuted(&self, perm: &[usize]) -> SplitMasks {
        SplitMasks {
            train: permute_values(&self.train, perm),
            val: permute_values(&self.val, perm),
            test: permute_values(&self.test, perm),
        }
    }
}

/// Per-class stratified split. Each class is shuffled with `seed`; the first
/// `round(train * c)` nodes go to train, the next `round(val * c)` to
/// validation and the rest to test.
pub fn stratified_masks(labels: &[usize], train: f64, val: f64, seed: u64) -> SplitMasks {
    let n = labels.len();
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (v, &c) in labels.iter().enumerate() {
        by_class[c].push(v);
    }
    let mut rng = rng::derive(seed, SPLIT_STREAM);
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let c = members.len() as f64;
        let n_train = (train * c).round() as usize;
        let n_val = ((val * c).round() as usize).min(members.len() - n_train.min(members.len()));
        for (rank, &v) in members.iter().enumerate() {
            if rank < n_train {
                masks.train[v] = true;
            } else if rank < n_train + n_val {
                masks.val[v] = true;
            } else {
                masks.test[v] = true;
            }
        }
    }
    masks
}

const SPLIT_STREAM: u64 = 0x5eed_5b17;

fn permute_values<T: Clone + Default>(values: &[T], perm: &[usize]) -> Vec<T> {
    let mut out = vec![T::default(); values.len()];
    for (old, v) in values.iter().enumerate() {
        out[perm[old]] = v.clone();
    }
    out
}

/// Check that `perm` is a bijection on `0..n`.
pub fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Graph(format!(
            "permutation has {} entries, graph has {} nodes",
            perm.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Graph(format!("permutation is not a bijection at {p}")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}

/// Undirected graph with symmetric CSR adjacency, sorted neighbor lists and
/// no self loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    labels: Option<Vec<usize>>,
    masks: Option<SplitMasks>,
}

impl CsrGraph {
    /// Build from an edge list. Reversed edges are added, duplicates and self
    /// loops dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for v in 0..num_nodes {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut raw = vec![0usize; offsets[num_nodes]];
        for &(u, v) in edges {
            if u != v {
                raw[fill[u]] = v;
                fill[u] += 1;
                raw[fill[v]] = u;
                fill[v] += 1;
            }
        }
        // sort and dedupe each list, then compact
        let mut compact_offsets = vec![0usize; num_nodes + 1];
        let mut neighbors = Vec::with_capacity(raw.len());
        for v in 0..num_nodes {
            let list = &mut raw[offsets[v]..offsets[v + 1]];
            list.sort_unstable();
            let mut last = None;
            for &u in list.iter() {
                if last != Some(u) {
                    neighbors.push(u);
                    last = Some(u);
                }
            }
            compact_offsets[v + 1] = neighbors.len();
        }
        Ok(CsrGraph {
            offsets: compact_offsets,
            neighbors,
            labels: None,
            masks: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes() {
            return Err(Error::Graph(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_masks(mut self, masks: SplitMasks) -> Result<Self> {
        let n = self.num_nodes();
        if masks.train.len() != n || masks.val.len() != n || masks.test.len() != n {
            return Err(Error::Graph("mask length differs from node count".into()));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Directed arcs stored in CSR (twice the undirected edge count).
    pub fn num_arcs(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn masks(&self) -> Option<&SplitMasks> {
        self.masks.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&c| c + 1)
    }

    /// Nodes of a split in ascending id order.
    pub fn split_nodes(&self, split: Split) -> Result<Vec<usize>> {
        let masks = self
            .masks
            .as_ref()
            .ok_or_else(|| Error::Graph("graph has no split masks".into()))?;
        Ok(masks
            .get(split)
            .iter()
            .enumerate()
            .filter_map(|(v, &m)| m.then_some(v))
            .collect())
    }

    /// Relabel nodes: old id `v` becomes `perm[v]`. Labels and masks follow.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        validate_permutation(perm, n)?;
        let inv = invert_permutation(perm);
        let mut offsets = vec![0usize; n + 1];
        let mut neighbors = Vec::with_capacity(self.neighbors.len());
        for new in 0..n {
            let old = inv[new];
            let start = neighbors.len();
            neighbors.extend(self.neighbors(old).iter().map(|&u| perm[u]));
            neighbors[start..].sort_unstable();
            offsets[new + 1] = neighbors.len();
        }
        Ok(CsrGraph {
            offsets,
            neighbors,
            labels: self.labels.as_ref().map(|l| permute_values(l, perm)),
            masks: self.masks.as_ref().map(|m| m.permuted(perm)),
        })
    }

    /// Subgraph induced by `nodes`; local id `i` is `nodes[i]`. Labels and
    /// masks are not carried over.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> CsrGraph {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut offsets = vec![0usize; nodes.len() + 1];
        let mut neighbors = Vec::new();
        for (i, &v) in nodes.iter().enumerate() {
            let start = neighbors.len();
            neighbors.extend(
                self.neighbors(v)
                    .iter()
                    .filter_map(|&u| (local[u] != usize::MAX).then_some(local[u])),
            );
            neighbors[start..].sort_unstable();
            offsets[i + 1] = neighbors.len();
        }
        CsrGraph {
            offsets,
            neighbors,
            labels: None,
            masks: None,
        }
    }

    pub fn degree_multiset(&self) -> Vec<usize> {
        let mut d: Vec<usize> = (0..self.num_nodes()).map(|v| self.degree(v)).collect();
        d.sort_unstable();
        d
    }
}

/// Apply a uniformly random relabeling. Returns the graph and the
/// permutation used (`old -> new`).
pub fn shuffle_nodes(graph: &CsrGraph, seed: u64) -> Result<(CsrGraph, Vec<usize>)> {
    let mut perm: Vec<usize> = (0..graph.num_nodes()).collect();
    perm.shuffle(&mut rng::seeded(seed));
    Ok((graph.permuted(&perm)?, perm))
}
