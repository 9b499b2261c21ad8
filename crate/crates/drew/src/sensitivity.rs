//! Empirical sensitivity analysis: how strongly one node's output depends
//! on another node's input, layer by layer.
//!
//! `jacobian_norms` differentiates every output coordinate of the chosen
//! layer against the input features and reduces each node pair's Jacobian
//! block to an entrywise L1 norm. First-interaction layers fall out of the
//! per-layer norms. `decay_comparison` runs the linearized probe that makes
//! the multi-hop advantage checkable in closed form: with identity weights,
//! no nonlinearity, no residual and no normalization, the classical model's
//! pair sensitivity is exactly an entry of a power of the 1-hop matrix,
//! while the rewired model keeps at least its direct hop-`r` coefficient.

use crate::graph::{self, Graph, HopIndex};
use crate::models::{
    forward_with_snapshots, Arch, HopContext, ModelConfig, ModelError, ModelParams,
};
use crate::schedule::DelayPolicy;
use crate::tensor::{Shape, Tape, Tensor, TensorError};
use serde::Serialize;
use thiserror::Error;

/// Entries at or below this magnitude count as structural zeros when
/// detecting first interactions at 64-bit precision.
pub const ZERO_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error("{0}")]
    Config(String),
}

/// Pairwise sensitivity result.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub version: String,
    pub seed: u64,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub model: ModelConfig,
    pub k_cap: usize,
    pub layers: usize,
    /// `s[i][j]`: entrywise L1 norm of the Jacobian of node `i`'s final
    /// state with respect to node `j`'s input features.
    pub s: Vec<Vec<f64>>,
    /// Minimum depth at which the pair's sensitivity exceeds the zero
    /// threshold; `None` when the nodes never interact.
    pub first_interaction: Vec<Vec<Option<usize>>>,
    /// `per_layer[l][i][j]`: the same norm at depth `l`.
    #[serde(skip)]
    pub per_layer: Vec<Vec<Vec<f64>>>,
}

impl SensitivityReport {
    /// First layer at which `i` becomes sensitive to `j`'s input.
    pub fn first_interaction(&self, i: u32, j: u32) -> Option<usize> {
        self.first_interaction[i as usize][j as usize]
    }
}

/// Computes per-layer Jacobian norms of the model on fixed features, in
/// eval mode so the map is deterministic.
///
/// One backward pass per output coordinate per layer; pair norms below
/// [`ZERO_THRESHOLD`] count as zero for first-interaction detection.
pub fn jacobian_norms(
    params: &ModelParams,
    g: &Graph,
    hi: &HopIndex,
    x: &Tensor,
    upto_layer: usize,
    seed: u64,
) -> Result<SensitivityReport, SensitivityError> {
    let cfg = params.config().clone();
    if upto_layer > cfg.layers {
        return Err(SensitivityError::Config(format!(
            "requested depth {upto_layer} exceeds model depth {}",
            cfg.layers
        )));
    }
    let n = g.node_count();
    let ctx = HopContext::build(&cfg, g, hi)?;
    let mut x = x.clone();
    x.requires_grad = true;
    x.grad = Some(vec![0.0; x.numel()]);

    let mut tape = Tape::new();
    let mut binding = params.bind(&mut tape);
    let xr = tape.leaf(&x);
    let snapshots = forward_with_snapshots(&mut tape, params, &mut binding, &ctx, xr, false)?;

    let in_dim = cfg.in_dim;
    let mut per_layer = Vec::with_capacity(upto_layer + 1);
    for &snap in snapshots.iter().take(upto_layer + 1) {
        let d_out = tape.shape(snap).cols();
        let mut s = vec![vec![0.0; n]; n];
        let mut seed_vec = vec![0.0; n * d_out];
        for i in 0..n {
            for c in 0..d_out {
                seed_vec[i * d_out + c] = 1.0;
                tape.backward_seeded(snap, &seed_vec)?;
                seed_vec[i * d_out + c] = 0.0;
                if let Some(gx) = tape.grad(xr) {
                    for j in 0..n {
                        let block = &gx[j * in_dim..(j + 1) * in_dim];
                        s[i][j] += block.iter().map(|v| v.abs()).sum::<f64>();
                    }
                }
                tape.zero_grads();
            }
        }
        per_layer.push(s);
    }

    let mut first = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            first[i][j] = per_layer
                .iter()
                .position(|s| s[i][j] > ZERO_THRESHOLD);
        }
    }

    Ok(SensitivityReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        graph_nodes: n,
        graph_edges: g.edge_count(),
        model: cfg,
        k_cap: ctx.k_cap(),
        layers: upto_layer,
        s: per_layer
            .last()
            .cloned()
            .expect("at least the depth-0 norms"),
        first_interaction: first,
        per_layer,
    })
}

/// Graph family for the linearized decay probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFamily {
    /// Complete binary tree of the given depth; pairs run from the root to
    /// the leftmost node at depth `r`.
    CompleteBinaryTree { depth: usize },
    /// Cycle of length `2r` per distance; pairs are antipodal.
    Cycle,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub r: usize,
    pub s_classical: f64,
    pub s_drew: f64,
    /// The hop-`r` coefficient `1/sqrt(d_i d_j)` of the probed pair.
    pub direct_term: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayComparison {
    pub version: String,
    pub family: ProbeFamily,
    pub rows: Vec<DecayRow>,
    /// Rewired sensitivity at distance `r` is at least the direct hop-`r`
    /// coefficient, for every probed distance.
    pub drew_floor_holds: bool,
    /// The rewired/classical ratio never decreases over the probed range.
    pub ratio_nondecreasing: bool,
}

fn probe_config(arch: Arch, layers: usize, k_cap: usize) -> Result<ModelConfig, ModelError> {
    let mut cfg = ModelConfig::new(arch, layers, 1, 1, 1).with_nu(DelayPolicy::finite(1));
    cfg.k_cap = Some(k_cap);
    cfg.linear_probe = true;
    cfg.use_batch_norm = false;
    cfg.validated()
}

/// Pair sensitivity of a probe model at depth `layers` between `i` and `j`.
fn probe_sensitivity(
    arch: Arch,
    g: &Graph,
    hi: &HopIndex,
    layers: usize,
    i: u32,
    j: u32,
) -> Result<f64, SensitivityError> {
    let k_cap = if arch == Arch::Gcn { 1 } else { layers };
    let cfg = probe_config(arch, layers, k_cap)?;
    use rand::SeedableRng;
    let params = ModelParams::init(
        &cfg,
        if arch == Arch::Gcn { 1 } else { k_cap },
        &mut rand_chacha::ChaCha12Rng::seed_from_u64(0),
    )?;
    let x = Tensor::filled(Shape::matrix(g.node_count(), 1), 1.0);
    let report = jacobian_norms(&params, g, hi, &x, layers, 0)?;
    Ok(report.s[i as usize][j as usize])
}

/// Runs both probes over distances `r_lo..=r_hi` and checks the direct-term
/// floor and ratio monotonicity. The checks are reported, not assumed.
pub fn decay_comparison(
    family: ProbeFamily,
    r_lo: usize,
    r_hi: usize,
) -> Result<DecayComparison, SensitivityError> {
    if r_lo < 1 || r_lo > r_hi {
        return Err(SensitivityError::Config(format!(
            "bad distance range {r_lo}..={r_hi}"
        )));
    }
    if let ProbeFamily::CompleteBinaryTree { depth } = family {
        if depth < r_hi {
            return Err(SensitivityError::Config(format!(
                "tree depth {depth} cannot reach distance {r_hi}"
            )));
        }
    }

    let mut rows = Vec::with_capacity(r_hi - r_lo + 1);
    for r in r_lo..=r_hi {
        let (g, i, j) = match family {
            ProbeFamily::CompleteBinaryTree { depth } => {
                // leftmost node at depth r in the heap layout
                (graph::gen::complete_binary_tree(depth), 0u32, (1u32 << r) - 1)
            }
            ProbeFamily::Cycle => (graph::gen::cycle(2 * r.max(2)), 0u32, r as u32),
        };
        let hi_idx = graph::compute_hop_index(&g, r.max(1));
        let s_classical = probe_sensitivity(Arch::Gcn, &g, &hi_idx, r, i, j)?;
        let s_drew = probe_sensitivity(Arch::DrewGcn, &g, &hi_idx, r, i, j)?;
        let direct = graph::hop_matrix(&g, &hi_idx, r)?
            .entries
            .iter()
            .find(|&&(a, b, _)| (a, b) == (i, j))
            .map(|&(_, _, v)| v)
            .unwrap_or(0.0);
        rows.push(DecayRow {
            r,
            s_classical,
            s_drew,
            direct_term: direct,
            ratio: s_drew / s_classical,
        });
    }

    let drew_floor_holds = rows.iter().all(|row| row.s_drew >= row.direct_term - 1e-12);
    let ratio_nondecreasing = rows.windows(2).all(|w| w[1].ratio >= w[0].ratio - 1e-12);
    Ok(DecayComparison {
        version: env!("CARGO_PKG_VERSION").to_string(),
        family,
        rows,
        drew_floor_holds,
        ratio_nondecreasing,
    })
}
