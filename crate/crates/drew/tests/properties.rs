//! Property tests over arbitrary inputs: graph/hop-index invariants,
//! schedule bounds, and checkpoint round trips.

use drew::graph::{compute_hop_index, eccentricity_cap, Graph, GraphError};
use drew::schedule::{build_schedule, DelayPolicy};
use drew::tensor::checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, EntryKind};
use proptest::prelude::*;

/// Arbitrary candidate edge lists for small node counts; many are invalid
/// on purpose so construction errors are exercised too.
fn raw_edges(max_n: u32) -> impl Strategy<Value = (Vec<(u32, u32)>, usize)> {
    (2..=max_n).prop_flat_map(move |n| {
        (
            proptest::collection::vec((0..n, 0..n), 1..40),
            Just(n as usize),
        )
    })
}

proptest! {
    #[test]
    fn graph_build_never_panics_and_validates((edges, n) in raw_edges(12)) {
        match Graph::build(&edges, n) {
            Ok(g) => {
                prop_assert_eq!(g.node_count(), n);
                // degrees equal CSR row lengths and every node is attached
                for i in 0..n as u32 {
                    prop_assert_eq!(g.degree(i) as usize, g.neighbors(i).len());
                    prop_assert!(g.degree(i) >= 1);
                }
                // adjacency is symmetric
                for i in 0..n as u32 {
                    for &j in g.neighbors(i) {
                        prop_assert!(g.neighbors(j).binary_search(&i).is_ok());
                    }
                }
            }
            Err(GraphError::SelfLoop(_)) => {
                prop_assert!(edges.iter().any(|&(u, v)| u == v));
            }
            Err(GraphError::IsolatedNode(i)) => {
                prop_assert!(edges.iter().all(|&(u, v)| u != i && v != i || u == v));
            }
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
        }
    }

    #[test]
    fn hop_shells_partition_and_are_symmetric((edges, n) in raw_edges(12)) {
        let Ok(g) = Graph::build(&edges, n) else { return Ok(()) };
        let hi = compute_hop_index(&g, n.max(1));
        for i in 0..n as u32 {
            prop_assert_eq!(hi.shell(i, 1), g.neighbors(i));
            let mut seen = vec![false; n];
            seen[i as usize] = true;
            let mut reached = 1usize;
            for k in 1..=hi.k_max() {
                for &j in hi.shell(i, k) {
                    prop_assert!(!seen[j as usize], "shells must be disjoint");
                    seen[j as usize] = true;
                    reached += 1;
                    // d(i,j) = k implies d(j,i) = k
                    prop_assert!(hi.shell(j, k).binary_search(&i).is_ok());
                }
            }
            let unreachable = (0..n as u32)
                .filter(|&j| hi.distance(i, j).is_none())
                .count();
            prop_assert_eq!(reached + unreachable, n);
        }
        prop_assert!(eccentricity_cap(&hi) <= n.saturating_sub(1).max(1));
    }

    #[test]
    fn schedules_respect_their_bounds(
        layers in 1usize..12,
        k_cap in 1usize..12,
        nu in prop_oneof![Just(None), (1u32..12).prop_map(Some)],
    ) {
        let policy = match nu {
            Some(v) => DelayPolicy::Finite(v),
            None => DelayPolicy::Infinite,
        };
        let s = build_schedule(layers, policy, k_cap);
        for l in 0..layers {
            let entries = s.layer(l);
            // hops are exactly 1..=min(l+1, k_cap), in order
            let hops: Vec<usize> = entries.iter().map(|e| e.hop).collect();
            let expect: Vec<usize> = (1..=(l + 1).min(k_cap)).collect();
            prop_assert_eq!(hops, expect);
            for e in entries {
                prop_assert!(e.source <= l);
                if policy == DelayPolicy::Infinite {
                    prop_assert_eq!(e.source, l);
                }
            }
        }
        if k_cap >= layers {
            prop_assert_eq!(s.total_aggregations(), layers * (layers + 1) / 2);
        }
    }

    #[test]
    fn checkpoints_round_trip(
        entries in proptest::collection::vec(
            ("[a-z]{1,12}(\\.[a-z0-9]{1,8}){0,2}", proptest::collection::vec(-1e6f64..1e6, 1..24), any::<bool>()),
            0..6,
        )
    ) {
        let entries: Vec<CheckpointEntry> = entries
            .into_iter()
            .map(|(name, data, buffer)| CheckpointEntry {
                name,
                kind: if buffer { EntryKind::Buffer } else { EntryKind::Param },
                shape: vec![data.len()],
                data,
            })
            .collect();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &entries).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!(entries, back);
    }
}
