//! Undirected simple graphs in CSR form, exact-distance hop shells, and
//! degree-normalized hop matrices.
//!
//! A [`HopIndex`] partitions, for every source node, the rest of the graph
//! into shells of nodes at shortest-path distance exactly `k`. Shells are
//! computed by one BFS per source node; sources are independent and run in
//! parallel. [`HopMatrix`] carries the sparse `1/sqrt(d_i d_j)` coefficients
//! used by the message-passing layers.

use rayon::prelude::*;
use std::collections::VecDeque;
use thiserror::Error;

pub mod gen;
pub mod io;

/// Errors from graph construction and hop queries.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge endpoint {node} out of range for graph with {n} nodes")]
    EndpointOutOfRange { node: u32, n: usize },
    #[error("self-loop at node {0} is not allowed")]
    SelfLoop(u32),
    #[error("node {0} has degree zero; isolated nodes are rejected")]
    IsolatedNode(u32),
    #[error("hop distance {k} exceeds computed maximum {k_max}")]
    HopOutOfRange { k: usize, k_max: usize },
    #[error("invalid edge-list file: {0}")]
    Parse(String),
    #[error("invalid hop-index cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected simple graph with compressed sparse adjacency.
///
/// Invariants established by [`Graph::build`]: no self-loops, no duplicate
/// edges, symmetric adjacency, `degree[i]` equal to the CSR row length of
/// `i`, and every node of degree at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    csr_offsets: Vec<usize>,
    csr_targets: Vec<u32>,
    degree: Vec<u32>,
}

impl Graph {
    /// Builds a graph from an unordered edge list over nodes `0..n`.
    ///
    /// Duplicate edges (in either orientation) collapse to one undirected
    /// edge. Self-loops, out-of-range endpoints, and isolated nodes are
    /// rejected.
    pub fn build(edges: &[(u32, u32)], n: usize) -> Result<Self, GraphError> {
        let mut dedup: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u as usize >= n {
                return Err(GraphError::EndpointOutOfRange { node: u, n });
            }
            if v as usize >= n {
                return Err(GraphError::EndpointOutOfRange { node: v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            dedup.push((u.min(v), u.max(v)));
        }
        dedup.sort_unstable();
        dedup.dedup();

        let mut degree = vec![0u32; n];
        for &(u, v) in &dedup {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        if let Some(i) = degree.iter().position(|&d| d == 0) {
            return Err(GraphError::IsolatedNode(i as u32));
        }

        let mut csr_offsets = vec![0usize; n + 1];
        for (i, &d) in degree.iter().enumerate() {
            csr_offsets[i + 1] = csr_offsets[i] + d as usize;
        }
        let mut cursor = csr_offsets.clone();
        let mut csr_targets = vec![0u32; 2 * dedup.len()];
        for &(u, v) in &dedup {
            csr_targets[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            csr_targets[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        for i in 0..n {
            csr_targets[csr_offsets[i]..csr_offsets[i + 1]].sort_unstable();
        }

        Ok(Graph {
            n,
            edges: dedup,
            csr_offsets,
            csr_targets,
            degree,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Deduplicated undirected edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn degree(&self, i: u32) -> u32 {
        self.degree[i as usize]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degree
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: u32) -> &[u32] {
        &self.csr_targets[self.csr_offsets[i as usize]..self.csr_offsets[i as usize + 1]]
    }

    /// Relabels nodes by `perm`, where `perm[i]` is the new index of node `i`.
    ///
    /// Used by the permutation-equivariance tests.
    pub fn permute(&self, perm: &[u32]) -> Result<Self, GraphError> {
        assert_eq!(perm.len(), self.n);
        let mapped: Vec<(u32, u32)> = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u as usize], perm[v as usize]))
            .collect();
        Graph::build(&mapped, self.n)
    }
}

/// Per-node partition of the graph into exact-distance shells.
///
/// `shell(i, k)` holds the sorted nodes `j` with `d_G(i, j) == k`, for
/// `1 <= k <= k_max`. Unreachable pairs appear in no shell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopIndex {
    k_max: usize,
    // shells[i][k-1] = sorted nodes at distance exactly k from i
    shells: Vec<Vec<Vec<u32>>>,
    // dense distance table, kept for graphs below DENSE_DIST_LIMIT nodes;
    // u32::MAX marks pairs that are unreachable or beyond k_max
    dist: Option<Vec<u32>>,
    n: usize,
}

const DENSE_DIST_LIMIT: usize = 2048;
const UNREACHABLE: u32 = u32::MAX;

/// Runs a BFS from `src` and returns distances capped at `k_max`
/// (`UNREACHABLE` beyond the cap or outside the component).
fn bfs_distances(g: &Graph, src: u32, k_max: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; g.n];
    let mut queue = VecDeque::new();
    dist[src as usize] = 0;
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        if du as usize >= k_max {
            continue;
        }
        for &v in g.neighbors(u) {
            if dist[v as usize] == UNREACHABLE {
                dist[v as usize] = du + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Computes exact-distance shells for every node up to `k_max` by one BFS
/// per source node. Sources run in parallel; each writes a disjoint row.
pub fn compute_hop_index(g: &Graph, k_max: usize) -> HopIndex {
    assert!(k_max >= 1, "k_max must be at least 1");
    let n = g.n;
    let shells: Vec<Vec<Vec<u32>>> = (0..n as u32)
        .into_par_iter()
        .map(|src| {
            let dist = bfs_distances(g, src, k_max);
            let mut row: Vec<Vec<u32>> = vec![Vec::new(); k_max];
            for (j, &d) in dist.iter().enumerate() {
                if d != UNREACHABLE && d >= 1 {
                    row[d as usize - 1].push(j as u32);
                }
            }
            // BFS discovery order is already index-sorted per level here
            // because neighbor lists are sorted, but don't rely on it.
            for shell in &mut row {
                shell.sort_unstable();
            }
            row
        })
        .collect();

    let mut hi = HopIndex {
        k_max,
        shells,
        dist: None,
        n,
    };
    hi.rebuild_dist();
    hi
}

impl HopIndex {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Sorted nodes at distance exactly `k` from `i` (empty if none).
    pub fn shell(&self, i: u32, k: usize) -> &[u32] {
        assert!(k >= 1 && k <= self.k_max, "shell distance out of range");
        &self.shells[i as usize][k - 1]
    }

    /// Shortest-path distance, or `None` if unreachable or beyond `k_max`.
    pub fn distance(&self, i: u32, j: u32) -> Option<usize> {
        if i == j {
            return Some(0);
        }
        if let Some(table) = &self.dist {
            let d = table[i as usize * self.n + j as usize];
            return (d != UNREACHABLE).then_some(d as usize);
        }
        (1..=self.k_max).find(|&k| self.shells[i as usize][k - 1].binary_search(&j).is_ok())
    }

    /// Rebuilds the dense distance table from shells (used after cache load).
    fn rebuild_dist(&mut self) {
        if self.n > DENSE_DIST_LIMIT {
            self.dist = None;
            return;
        }
        let n = self.n;
        let mut table = vec![UNREACHABLE; n * n];
        for (i, row) in self.shells.iter().enumerate() {
            table[i * n + i] = 0;
            for (k, shell) in row.iter().enumerate() {
                for &j in shell {
                    table[i * n + j as usize] = k as u32 + 1;
                }
            }
        }
        self.dist = Some(table);
    }

    pub(crate) fn from_parts(n: usize, k_max: usize, shells: Vec<Vec<Vec<u32>>>) -> Self {
        let mut hi = HopIndex {
            k_max,
            shells,
            dist: None,
            n,
        };
        hi.rebuild_dist();
        hi
    }
}

/// Sparse degree-normalized hop-`k` matrix.
///
/// Entries are `(i, j, gamma)` triples with `gamma = 1/sqrt(d_i d_j)` for
/// every pair at distance exactly `k`, sorted by `(i, j)`. The entry set is
/// symmetric because shortest-path distance is.
#[derive(Debug, Clone, PartialEq)]
pub struct HopMatrix {
    pub k: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

/// Builds the hop-`k` matrix from precomputed shells.
pub fn hop_matrix(g: &Graph, hi: &HopIndex, k: usize) -> Result<HopMatrix, GraphError> {
    if k < 1 || k > hi.k_max {
        return Err(GraphError::HopOutOfRange { k, k_max: hi.k_max });
    }
    let mut entries = Vec::new();
    for i in 0..g.n as u32 {
        let di = g.degree(i) as f64;
        for &j in hi.shell(i, k) {
            let gamma = 1.0 / (di * g.degree(j) as f64).sqrt();
            entries.push((i, j, gamma));
        }
    }
    // i-major, j-minor order is inherited from sorted shells.
    Ok(HopMatrix { k, entries })
}

/// Unnormalized hop-`k` incidence (coefficient 1 on every shell pair), as
/// used by aggregations that sum rather than average.
pub fn hop_incidence(g: &Graph, hi: &HopIndex, k: usize) -> Result<HopMatrix, GraphError> {
    if k < 1 || k > hi.k_max {
        return Err(GraphError::HopOutOfRange { k, k_max: hi.k_max });
    }
    let mut entries = Vec::new();
    for i in 0..g.n as u32 {
        for &j in hi.shell(i, k) {
            entries.push((i, j, 1.0));
        }
    }
    Ok(HopMatrix { k, entries })
}

/// Largest distance with a nonempty shell anywhere in the index: the
/// effective diameter within `k_max`. Returns 0 only for an empty index.
pub fn eccentricity_cap(hi: &HopIndex) -> usize {
    let mut cap = 0;
    for row in &hi.shells {
        for (k, shell) in row.iter().enumerate().rev() {
            if !shell.is_empty() {
                cap = cap.max(k + 1);
                break;
            }
        }
    }
    cap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4() -> Graph {
        Graph::build(&[(0, 1), (1, 2), (2, 3)], 4).unwrap()
    }

    #[test]
    fn builds_path_with_degrees() {
        let g = path4();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.degrees(), &[1, 2, 2, 1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn dedups_symmetric_pair() {
        let g = Graph::build(&[(0, 1), (1, 0)], 2).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degrees(), &[1, 1]);
    }

    #[test]
    fn rejects_self_loop() {
        let err = Graph::build(&[(0, 0)], 1).unwrap_err();
        assert!(matches!(err, GraphError::SelfLoop(0)));
    }

    #[test]
    fn rejects_out_of_range_endpoint() {
        let err = Graph::build(&[(0, 5)], 3).unwrap_err();
        assert!(matches!(err, GraphError::EndpointOutOfRange { node: 5, n: 3 }));
    }

    #[test]
    fn rejects_isolated_node() {
        let err = Graph::build(&[(0, 1)], 3).unwrap_err();
        assert!(matches!(err, GraphError::IsolatedNode(2)));
    }

    #[test]
    fn path_shells() {
        let g = path4();
        let hi = compute_hop_index(&g, 3);
        assert_eq!(hi.shell(0, 1), &[1]);
        assert_eq!(hi.shell(0, 2), &[2]);
        assert_eq!(hi.shell(0, 3), &[3]);
        assert_eq!(hi.distance(0, 3), Some(3));
    }

    #[test]
    fn disjoint_triangles_have_empty_cross_shells() {
        let g = gen::two_triangles();
        let hi = compute_hop_index(&g, 3);
        assert_eq!(hi.shell(0, 1), &[1, 2]);
        assert!(hi.shell(0, 2).is_empty());
        assert!(hi.shell(0, 3).is_empty());
        assert_eq!(hi.distance(0, 3), None);
    }

    #[test]
    fn shell_one_equals_neighbor_list() {
        let g = gen::erdos_renyi(24, 0.2, 7).unwrap();
        let hi = compute_hop_index(&g, 4);
        for i in 0..g.node_count() as u32 {
            assert_eq!(hi.shell(i, 1), g.neighbors(i));
        }
    }

    #[test]
    fn cycle_hop2_gamma_is_half() {
        let g = gen::cycle(6);
        let hi = compute_hop_index(&g, 3);
        let m = hop_matrix(&g, &hi, 2).unwrap();
        assert_eq!(m.entries.len(), 12);
        for &(_, _, gamma) in &m.entries {
            assert_eq!(gamma, 0.5);
        }
    }

    #[test]
    fn path_hop3_single_unit_pair() {
        let g = path4();
        let hi = compute_hop_index(&g, 3);
        let m = hop_matrix(&g, &hi, 3).unwrap();
        assert_eq!(m.entries, vec![(0, 3, 1.0), (3, 0, 1.0)]);
    }

    #[test]
    fn star_hop2_connects_leaves_with_unit_gamma() {
        let g = gen::star(5); // center 0, leaves 1..=4
        let hi = compute_hop_index(&g, 2);
        let m = hop_matrix(&g, &hi, 2).unwrap();
        assert_eq!(m.entries.len(), 12); // 4*3 ordered leaf pairs
        for &(i, j, gamma) in &m.entries {
            assert_ne!(i, 0);
            assert_ne!(j, 0);
            assert_eq!(gamma, 1.0);
        }
    }

    #[test]
    fn hop_matrix_rejects_k_beyond_index() {
        let g = path4();
        let hi = compute_hop_index(&g, 2);
        assert!(matches!(
            hop_matrix(&g, &hi, 3),
            Err(GraphError::HopOutOfRange { k: 3, k_max: 2 })
        ));
    }

    #[test]
    fn eccentricity_caps() {
        let p4 = path4();
        assert_eq!(eccentricity_cap(&compute_hop_index(&p4, 5)), 3);
        let c6 = gen::cycle(6);
        assert_eq!(eccentricity_cap(&compute_hop_index(&c6, 5)), 3);
        let tt = gen::two_triangles();
        assert_eq!(eccentricity_cap(&compute_hop_index(&tt, 5)), 1);
    }

    #[test]
    fn shells_partition_reachable_nodes() {
        let g = gen::disjoint_union(&gen::cycle(5), &gen::path(4));
        let hi = compute_hop_index(&g, 8);
        let n = g.node_count();
        for i in 0..n as u32 {
            let mut seen = vec![false; n];
            seen[i as usize] = true;
            let mut total = 1usize;
            for k in 1..=hi.k_max() {
                for &j in hi.shell(i, k) {
                    assert!(!seen[j as usize], "shells must be disjoint");
                    seen[j as usize] = true;
                    total += 1;
                }
            }
            let unreachable = (0..n as u32)
                .filter(|&j| hi.distance(i, j).is_none())
                .count();
            assert_eq!(total + unreachable, n);
        }
    }

    #[test]
    fn shell_symmetry() {
        let g = gen::erdos_renyi(30, 0.12, 11).unwrap();
        let hi = compute_hop_index(&g, 6);
        for i in 0..g.node_count() as u32 {
            for k in 1..=6 {
                for &j in hi.shell(i, k) {
                    assert!(hi.shell(j, k).binary_search(&i).is_ok());
                }
            }
        }
    }

    #[test]
    fn permute_relabels_structure() {
        let g = path4();
        let p = g.permute(&[3, 1, 0, 2]).unwrap();
        // old edges (0,1),(1,2),(2,3) -> (3,1),(1,0),(0,2)
        assert_eq!(p.edges(), &[(0, 1), (0, 2), (1, 3)]);
        assert_eq!(p.degree(3), 1);
    }
}
