//! Recursive partition hierarchies and the contiguous reindexing they induce.
//!
//! Level `l` splits every level-`(l-1)` part into `p_l` pieces, so level `l`
//! has `p_1 * ... * p_l` part ids; a node's id at level `l` is
//! `parent * p_l + local`. Leaves are laid out in part-id order, each leaf
//! taking a contiguous range of new node ids, and nodes inside a leaf keep
//! their input order. With a row factorization `m_1 x m_2 x ...` and
//! branching `[m_1, m_2, ...]` every leaf then lines up with the rows that
//! share the leading TT slices.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::partition::{edge_cut, partition_with, PartitionOptions};
use super::{invert_permutation, validate_permutation, CsrGraph};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionHierarchy {
    pub branching: Vec<usize>,
    /// `assignments[l][v]`: global part id of original node `v` at level `l + 1`.
    pub assignments: Vec<Vec<usize>>,
    /// old id -> new id
    pub permutation: Vec<usize>,
    /// new id -> old id
    pub inverse: Vec<usize>,
    /// Edge cut of each level's partition on the whole graph.
    pub level_cuts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermLevel {
    None,
    First,
    Second,
}

impl std::str::FromStr for PermLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "no-perm" => Ok(PermLevel::None),
            "first" | "1" | "1st" => Ok(PermLevel::First),
            "second" | "2" | "2nd" => Ok(PermLevel::Second),
            other => Err(Error::InvalidConfig(format!(
                "unknown permutation level {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for PermLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PermLevel::None => "none",
            PermLevel::First => "first",
            PermLevel::Second => "second",
        })
    }
}

impl PartitionHierarchy {
    pub fn levels(&self) -> usize {
        self.branching.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.permutation.len()
    }

    /// Part id of every node at the deepest level.
    pub fn leaves(&self) -> &[usize] {
        self.assignments.last().expect("at least one level")
    }

    /// Same hierarchy with a different node permutation.
    pub fn with_permutation(&self, permutation: Vec<usize>) -> Result<Self> {
        validate_permutation(&permutation, self.num_nodes())?;
        let inverse = invert_permutation(&permutation);
        Ok(PartitionHierarchy {
            permutation,
            inverse,
            ..self.clone()
        })
    }
}

/// Build a hierarchy with default partitioning options.
pub fn build_hierarchy(graph: &CsrGraph, branching: &[usize], seed: u64) -> Result<PartitionHierarchy> {
    build_hierarchy_with(graph, branching, &PartitionOptions::with_seed(seed))
}

pub fn build_hierarchy_with(
    graph: &CsrGraph,
    branching: &[usize],
    opts: &PartitionOptions,
) -> Result<PartitionHierarchy> {
    let n = graph.num_nodes();
    if branching.is_empty() || branching.contains(&0) {
        return Err(Error::Partition(format!(
            "branching must be a non-empty list of positive factors, got {branching:?}"
        )));
    }
    let total = branching
        .iter()
        .try_fold(1usize, |a, &p| a.checked_mul(p))
        .unwrap_or(usize::MAX);
    if total > n {
        return Err(Error::Partition(format!(
            "branching {branching:?} needs {total} leaves but the graph has {n} nodes"
        )));
    }

    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(branching.len());
    let mut level_cuts = Vec::with_capacity(branching.len());
    let mut parent = vec![0usize; n];
    let mut parent_parts = 1usize;
    for (level, &p) in branching.iter().enumerate() {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); parent_parts];
        for v in 0..n {
            members[parent[v]].push(v);
        }
        let mut current = vec![0usize; n];
        for (part, nodes) in members.iter().enumerate() {
            if nodes.is_empty() {
                continue;
            }
            let local = if p == 1 {
                vec![0; nodes.len()]
            } else if nodes.len() <= p {
                (0..nodes.len()).collect()
            } else {
                let sub = graph.induced_subgraph(nodes);
                let sub_opts = PartitionOptions {
                    seed: opts.seed ^ ((level as u64) << 32) ^ part as u64,
                    ..*opts
                };
                partition_with(&sub, p, &sub_opts)?
            };
            for (&v, &l) in nodes.iter().zip(&local) {
                current[v] = part * p + l;
            }
        }
        level_cuts.push(edge_cut(graph, &current));
        parent_parts *= p;
        parent = current.clone();
        assignments.push(current);
    }

    let leaves = assignments.last().expect("non-empty");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (leaves[v], v));
    let mut permutation = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        permutation[old] = new;
    }
    Ok(PartitionHierarchy {
        branching: branching.to_vec(),
        assignments,
        inverse: order,
        permutation,
        level_cuts,
    })
}

/// Relabel `graph` by the hierarchy's permutation.
pub fn reorder(graph: &CsrGraph, hierarchy: &PartitionHierarchy) -> Result<CsrGraph> {
    if hierarchy.num_nodes() != graph.num_nodes() {
        return Err(Error::Graph(format!(
            "hierarchy covers {} nodes, graph has {}",
            hierarchy.num_nodes(),
            graph.num_nodes()
        )));
    }
    graph.permuted(&hierarchy.permutation)
}

/// Shuffle the order of the blocks at one level of the hierarchy.
///
/// Blocks are the level-1 parts for [`PermLevel::First`] and the level-2
/// parts for [`PermLevel::Second`]. Block order is shuffled globally; the
/// relative order of nodes inside a block is kept. Returns a new
/// `old -> new` permutation.
pub fn permute_level(hierarchy: &PartitionHierarchy, level: PermLevel, seed: u64) -> Result<Vec<usize>> {
    let depth = match level {
        PermLevel::None => return Ok(hierarchy.permutation.clone()),
        PermLevel::First => 1,
        PermLevel::Second => 2,
    };
    if hierarchy.levels() < depth {
        return Err(Error::Partition(format!(
            "{level} level permutation needs {depth} levels, hierarchy has {}",
            hierarchy.levels()
        )));
    }
    let block_of = &hierarchy.assignments[depth - 1];
    // blocks in their current layout order
    let mut blocks: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &old in &hierarchy.inverse {
        if seen.insert(block_of[old]) {
            blocks.push(block_of[old]);
        }
    }
    blocks.shuffle(&mut rng::seeded(seed));
    let mut rank = std::collections::HashMap::with_capacity(blocks.len());
    for (r, &b) in blocks.iter().enumerate() {
        rank.insert(b, r);
    }
    let mut order = hierarchy.inverse.clone();
    // stable sort keeps the within-block order of the current layout
    order.sort_by_key(|&old| rank[&block_of[old]]);
    let mut permutation = vec![0usize; order.len()];
    for (new, &old) in order.iter().enumerate() {
        permutation[old] = new;
    }
    Ok(permutation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique(nodes: &[usize], e: &mut Vec<(usize, usize)>) {
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                e.push((nodes[i], nodes[j]));
            }
        }
    }

    /// Two communities of two sub-cliques each, connected by one edge
    /// inside each community, with node ids interleaved.
    fn planted() -> CsrGraph {
        let mut e = Vec::new();
        let groups: Vec<Vec<usize>> = (0..4).map(|g| (0..10).map(|i| i * 4 + g).collect()).collect();
        for g in &groups {
            clique(g, &mut e);
        }
        e.push((groups[0][0], groups[1][0]));
        e.push((groups[2][0], groups[3][0]));
        CsrGraph::from_edges(40, &e).unwrap()
    }

    #[test]
    fn single_level_of_one_is_identity() {
        let g = planted();
        let h = build_hierarchy(&g, &[1], 0).unwrap();
        assert_eq!(h.permutation, (0..40).collect::<Vec<_>>());
        assert_eq!(reorder(&g, &h).unwrap(), g);
    }

    #[test]
    fn planted_two_level_structure() {
        let g = planted();
        let h = build_hierarchy(&g, &[2, 2], 3).unwrap();
        assert_eq!(h.level_cuts[0], 0);
        assert_eq!(h.level_cuts[1], 2);
        // every leaf is one sub-clique
        for leaf in 0..4 {
            let members: Vec<usize> = (0..40).filter(|&v| h.leaves()[v] == leaf).collect();
            assert_eq!(members.len(), 10);
            assert!(members.iter().all(|&v| v % 4 == members[0] % 4));
            // contiguous new ids
            let mut ids: Vec<usize> = members.iter().map(|&v| h.permutation[v]).collect();
            ids.sort();
            assert_eq!(ids.last().unwrap() - ids[0], 9);
        }
    }

    #[test]
    fn nesting() {
        let g = planted();
        let h = build_hierarchy(&g, &[2, 2], 1).unwrap();
        for v in 0..40 {
            assert_eq!(h.assignments[1][v] / 2, h.assignments[0][v]);
        }
    }

    #[test]
    fn infeasible_branching() {
        let g = planted();
        assert!(build_hierarchy(&g, &[7, 7], 0).is_err());
        assert!(build_hierarchy(&g, &[], 0).is_err());
        assert!(build_hierarchy(&g, &[2, 0], 0).is_err());
    }

    fn eight_node_hierarchy() -> PartitionHierarchy {
        PartitionHierarchy {
            branching: vec![2, 2],
            assignments: vec![vec![0, 0, 0, 0, 1, 1, 1, 1], vec![0, 0, 1, 1, 2, 2, 3, 3]],
            permutation: (0..8).collect(),
            inverse: (0..8).collect(),
            level_cuts: vec![0, 0],
        }
    }

    #[test]
    fn first_level_moves_whole_blocks() {
        let h = eight_node_hierarchy();
        assert_eq!(permute_level(&h, PermLevel::None, 0).unwrap(), h.permutation);
        let mut outcomes = std::collections::HashSet::new();
        for seed in 0..32 {
            let p = permute_level(&h, PermLevel::First, seed).unwrap();
            outcomes.insert(p.clone());
            assert!(
                p == vec![0, 1, 2, 3, 4, 5, 6, 7] || p == vec![4, 5, 6, 7, 0, 1, 2, 3],
                "{p:?}"
            );
        }
        assert_eq!(outcomes.len(), 2);
    }

    #[test]
    fn second_level_keeps_pairs_adjacent() {
        let h = eight_node_hierarchy();
        let mut outcomes = std::collections::HashSet::new();
        for seed in 0..400 {
            let p = permute_level(&h, PermLevel::Second, seed).unwrap();
            for pair in 0..4 {
                let (a, b) = (p[2 * pair], p[2 * pair + 1]);
                assert_eq!(b, a + 1);
                assert_eq!(a % 2, 0);
            }
            outcomes.insert(p);
        }
        assert_eq!(outcomes.len(), 24);
    }

    #[test]
    fn second_level_needs_two_levels() {
        let g = planted();
        let h = build_hierarchy(&g, &[2], 0).unwrap();
        assert!(permute_level(&h, PermLevel::Second, 0).is_err());
        assert!(permute_level(&h, PermLevel::First, 0).is_ok());
    }
}
