//! Precomputed per-graph aggregation context: the layer schedule plus the
//! sparse hop matrices each architecture reads.
//!
//! A context is built once per (graph, config) and replicated cheaply for
//! disjoint-union batches of the same graph.

use super::{Arch, ModelConfig, ModelError};
use crate::graph::{self, Graph, HopIndex};
use crate::schedule::{build_schedule, LayerSchedule};
use crate::tensor::SparseMatrix;
use std::sync::Arc;

/// Per-hop edge endpoints `(targets i, sources j)` for gated aggregation,
/// aligned with the sorted hop-matrix entries.
#[derive(Debug, Clone)]
pub struct HopEdges {
    pub i: Arc<Vec<u32>>,
    pub j: Arc<Vec<u32>>,
}

pub struct HopContext {
    n: usize,
    batch: usize,
    k_cap: usize,
    schedule: LayerSchedule,
    gamma: Vec<Arc<SparseMatrix>>,
    incidence: Vec<Arc<SparseMatrix>>,
    edges: Vec<HopEdges>,
}

impl HopContext {
    /// Resolves `k_cap` (explicit, or the effective diameter) and builds
    /// the matrices the architecture needs, one per hop `1..=k_cap`.
    pub fn build(cfg: &ModelConfig, g: &Graph, hi: &HopIndex) -> Result<Self, ModelError> {
        let k_cap = match cfg.arch {
            Arch::Gcn => 1,
            _ => cfg
                .k_cap
                .unwrap_or_else(|| graph::eccentricity_cap(hi).max(1)),
        };
        if k_cap > hi.k_max() {
            return Err(ModelError::Config(format!(
                "k_cap {k_cap} exceeds hop index depth {}",
                hi.k_max()
            )));
        }
        let schedule = build_schedule(cfg.layers, cfg.nu, k_cap);

        let mut gamma = Vec::new();
        let mut incidence = Vec::new();
        let mut edges = Vec::new();
        for k in 1..=k_cap {
            match cfg.arch {
                Arch::Gcn | Arch::DrewGcn | Arch::SpGcn => {
                    let m = graph::hop_matrix(g, hi, k)?;
                    gamma.push(Arc::new(SparseMatrix::new(
                        g.node_count(),
                        g.node_count(),
                        m.entries,
                    )));
                }
                Arch::DrewGin => {
                    let m = graph::hop_incidence(g, hi, k)?;
                    incidence.push(Arc::new(SparseMatrix::new(
                        g.node_count(),
                        g.node_count(),
                        m.entries,
                    )));
                }
                Arch::DrewGatedGcn => {
                    let m = graph::hop_incidence(g, hi, k)?;
                    let (i, j): (Vec<u32>, Vec<u32>) =
                        m.entries.iter().map(|&(i, j, _)| (i, j)).unzip();
                    edges.push(HopEdges {
                        i: Arc::new(i),
                        j: Arc::new(j),
                    });
                }
            }
        }

        Ok(HopContext {
            n: g.node_count(),
            batch: 1,
            k_cap,
            schedule,
            gamma,
            incidence,
            edges,
        })
    }

    /// Context for a disjoint union of `batch` copies of the same graph.
    pub fn replicate(&self, batch: usize) -> Self {
        assert!(batch >= 1);
        let offset_edges = |e: &HopEdges| {
            let mut i = Vec::with_capacity(e.i.len() * batch);
            let mut j = Vec::with_capacity(e.j.len() * batch);
            for b in 0..batch as u32 {
                let off = b * self.n as u32;
                i.extend(e.i.iter().map(|&v| v + off));
                j.extend(e.j.iter().map(|&v| v + off));
            }
            HopEdges {
                i: Arc::new(i),
                j: Arc::new(j),
            }
        };
        HopContext {
            n: self.n,
            batch,
            k_cap: self.k_cap,
            schedule: self.schedule.clone(),
            gamma: self
                .gamma
                .iter()
                .map(|m| Arc::new(m.block_diag(batch)))
                .collect(),
            incidence: self
                .incidence
                .iter()
                .map(|m| Arc::new(m.block_diag(batch)))
                .collect(),
            edges: self.edges.iter().map(offset_edges).collect(),
        }
    }

    /// Nodes per instance.
    pub fn graph_nodes(&self) -> usize {
        self.n
    }

    /// Instances in the disjoint union.
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Total rows a feature matrix must have.
    pub fn total_nodes(&self) -> usize {
        self.n * self.batch
    }

    pub fn k_cap(&self) -> usize {
        self.k_cap
    }

    pub fn schedule(&self) -> &LayerSchedule {
        &self.schedule
    }

    pub(crate) fn gamma(&self, k: usize) -> &Arc<SparseMatrix> {
        &self.gamma[k - 1]
    }

    pub(crate) fn incidence(&self, k: usize) -> &Arc<SparseMatrix> {
        &self.incidence[k - 1]
    }

    pub(crate) fn hop_edges(&self, k: usize) -> &HopEdges {
        &self.edges[k - 1]
    }

    /// The hop-`k` gamma entry for a node pair, 0 when not at distance `k`
    /// (single-instance contexts only; used by sensitivity probes).
    pub fn gamma_entry(&self, k: usize, i: u32, j: u32) -> f64 {
        self.gamma[k - 1]
            .entries
            .binary_search_by_key(&(i, j), |&(a, b, _)| (a, b))
            .map(|pos| self.gamma[k - 1].entries[pos].2)
            .unwrap_or(0.0)
    }
}
