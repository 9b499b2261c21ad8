//! Deterministic graph generators for experiments and tests.

use super::{Graph, GraphError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Path graph on `n >= 2` nodes: edges `(i, i+1)`.
pub fn path(n: usize) -> Graph {
    assert!(n >= 2);
    let edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|i| (i, i + 1)).collect();
    Graph::build(&edges, n).expect("path is always valid")
}

/// Cycle graph on `n >= 3` nodes: edges `(i, (i+1) mod n)`.
pub fn cycle(n: usize) -> Graph {
    assert!(n >= 3);
    let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
    Graph::build(&edges, n).expect("cycle is always valid")
}

/// Star graph on `n >= 2` nodes with center 0.
pub fn star(n: usize) -> Graph {
    assert!(n >= 2);
    let edges: Vec<(u32, u32)> = (1..n as u32).map(|i| (0, i)).collect();
    Graph::build(&edges, n).expect("star is always valid")
}

/// Complete binary tree of the given depth (depth 0 is a single edge pair
/// rejected, so depth must be >= 1). Node 0 is the root; node `i` has
/// children `2i+1` and `2i+2`. Has `2^(depth+1) - 1` nodes.
pub fn complete_binary_tree(depth: usize) -> Graph {
    assert!(depth >= 1);
    let n = (1usize << (depth + 1)) - 1;
    let mut edges = Vec::with_capacity(n - 1);
    for i in 0..n as u32 {
        for c in [2 * i + 1, 2 * i + 2] {
            if (c as usize) < n {
                edges.push((i, c));
            }
        }
    }
    Graph::build(&edges, n).expect("tree is always valid")
}

/// Disjoint union of two graphs; nodes of `b` are shifted by `a.node_count()`.
pub fn disjoint_union(a: &Graph, b: &Graph) -> Graph {
    let off = a.node_count() as u32;
    let mut edges: Vec<(u32, u32)> = a.edges().to_vec();
    edges.extend(b.edges().iter().map(|&(u, v)| (u + off, v + off)));
    Graph::build(&edges, a.node_count() + b.node_count()).expect("union of valid graphs")
}

/// Two disjoint triangles on 6 nodes.
pub fn two_triangles() -> Graph {
    disjoint_union(&cycle(3), &cycle(3))
}

/// Erdos-Renyi G(n, p), deterministic for a given seed.
///
/// Samples each unordered pair independently. Fails with
/// [`GraphError::IsolatedNode`] when the draw leaves a node isolated;
/// see [`erdos_renyi_connectedish`] for a retrying variant.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph, GraphError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::build(&edges, n)
}

/// Erdos-Renyi draw retried with incremented sub-seeds until no node is
/// isolated. Deterministic for a given seed.
pub fn erdos_renyi_connectedish(n: usize, p: f64, seed: u64) -> Graph {
    for attempt in 0..10_000u64 {
        match erdos_renyi(n, p, seed.wrapping_add(attempt)) {
            Ok(g) => return g,
            Err(GraphError::IsolatedNode(_)) => continue,
            Err(e) => panic!("unexpected generator failure: {e}"),
        }
    }
    panic!("no isolated-node-free draw in 10000 attempts; p too small for n={n}");
}
