//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)]

pub mod ops;

use drew::graph::Graph;

/// Floyd-Warshall all-pairs distances: the independent oracle for BFS hop
/// shells. Quadratic memory, cubic time; test-only.
pub fn floyd_warshall(g: &Graph) -> Vec<Vec<Option<usize>>> {
    let n = g.node_count();
    const INF: usize = usize::MAX / 4;
    let mut dist = vec![vec![INF; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v) in g.edges() {
        dist[u as usize][v as usize] = 1;
        dist[v as usize][u as usize] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let through = dist[i][k] + dist[k][j];
                if through < dist[i][j] {
                    dist[i][j] = through;
                }
            }
        }
    }
    dist.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|d| (d < INF).then_some(d))
                .collect()
        })
        .collect()
}
