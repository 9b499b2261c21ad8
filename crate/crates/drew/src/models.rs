//! Multi-hop message-passing models and their classical baselines.
//!
//! Five architectures share one parameter/forward machinery:
//!
//! - `gcn`: residual graph convolution, 1-hop only.
//! - `drew_gcn`: dynamically rewired residual convolution; hop `k` joins at
//!   layer `k-1` and reads delayed states per the schedule.
//! - `drew_gin`: per-hop MLP aggregation over unnormalized shell sums with
//!   an `(1+eps)`-scaled self MLP.
//! - `drew_gatedgcn`: shared-weight gated aggregation with per-hop gate
//!   normalization.
//! - `sp_gcn`: static multi-hop baseline aggregating every hop at every
//!   layer with simplex-constrained hop weights.

use crate::graph::GraphError;
use crate::schedule::{DelayPolicy, ScheduleError};
use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod context;
mod forward;
mod params;

pub use context::HopContext;
pub use forward::{
    forward_embeddings, forward_with_snapshots, readout_mean, readout_node,
};
pub use params::{Binding, ModelParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Config(String),
}

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "drew_gcn")]
    DrewGcn,
    #[serde(rename = "drew_gin")]
    DrewGin,
    #[serde(rename = "drew_gatedgcn")]
    DrewGatedGcn,
    #[serde(rename = "sp_gcn")]
    SpGcn,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::DrewGcn => "drew_gcn",
            Arch::DrewGin => "drew_gin",
            Arch::DrewGatedGcn => "drew_gatedgcn",
            Arch::SpGcn => "sp_gcn",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(Arch::Gcn),
            "drew_gcn" => Ok(Arch::DrewGcn),
            "drew_gin" => Ok(Arch::DrewGin),
            "drew_gatedgcn" => Ok(Arch::DrewGatedGcn),
            "sp_gcn" => Ok(Arch::SpGcn),
            other => Err(format!(
                "unknown arch {other:?}; expected one of gcn, drew_gcn, drew_gin, drew_gatedgcn, sp_gcn"
            )),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model hyperparameters. `k_cap = None` resolves to the effective graph
/// diameter when the hop context is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub hidden: usize,
    pub nu: DelayPolicy,
    pub k_cap: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_sharing: bool,
    pub use_batch_norm: bool,
    pub gin_eps: f64,
    pub gate_eps: f64,
    /// Linearized probe: no input/output projections, no nonlinearity, no
    /// residual, no batch norm, identity-initialized square weights. Only
    /// the gcn-family architectures support it.
    pub linear_probe: bool,
}

impl ModelConfig {
    /// Config with per-arch defaults: weight sharing on for the gated
    /// model (where gates make shared weights expressive enough) and off
    /// elsewhere; batch norm on; `gin_eps` 0; `gate_eps` 1e-6.
    pub fn new(arch: Arch, layers: usize, hidden: usize, in_dim: usize, out_dim: usize) -> Self {
        ModelConfig {
            arch,
            layers,
            hidden,
            nu: DelayPolicy::Infinite,
            k_cap: None,
            in_dim,
            out_dim,
            weight_sharing: matches!(arch, Arch::DrewGatedGcn),
            use_batch_norm: true,
            gin_eps: 0.0,
            gate_eps: 1e-6,
            linear_probe: false,
        }
    }

    pub fn with_nu(mut self, nu: DelayPolicy) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_k_cap(mut self, k_cap: usize) -> Self {
        self.k_cap = Some(k_cap);
        self
    }

    /// Checks invariants and normalizes forced settings.
    pub fn validated(mut self) -> Result<Self, ModelError> {
        if self.layers < 1 {
            return Err(ModelError::Config("layers must be at least 1".into()));
        }
        if self.hidden < 1 {
            return Err(ModelError::Config("hidden must be at least 1".into()));
        }
        if self.in_dim < 1 || self.out_dim < 1 {
            return Err(ModelError::Config("in_dim/out_dim must be positive".into()));
        }
        if self.k_cap == Some(0) {
            return Err(ModelError::Config("k_cap must be at least 1".into()));
        }
        if self.arch == Arch::DrewGatedGcn {
            // gated layers always share weights across hops
            self.weight_sharing = true;
        }
        if self.linear_probe {
            if !matches!(self.arch, Arch::Gcn | Arch::DrewGcn) {
                return Err(ModelError::Config(
                    "linear probe supports gcn and drew_gcn only".into(),
                ));
            }
            if self.in_dim != self.hidden {
                return Err(ModelError::Config(
                    "linear probe needs in_dim == hidden (no input projection)".into(),
                ));
            }
            if self.use_batch_norm {
                return Err(ModelError::Config(
                    "linear probe is incompatible with batch norm".into(),
                ));
            }
        }
        Ok(self)
    }

    /// Active hops at layer `l` under `k_cap`.
    pub(crate) fn hops_at_layer(&self, l: usize, k_cap: usize) -> usize {
        match self.arch {
            Arch::Gcn => 1,
            Arch::SpGcn => k_cap,
            _ => (l + 1).min(k_cap),
        }
    }
}

/// Exact parameter accounting for one architecture at a resolved `k_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    /// Number of `hidden x hidden` channel-mixing weight matrices across
    /// all layers (MLP layers counted individually for the gin variant).
    pub weight_matrices: usize,
    /// Scalars in all trainable tensors, projections and norms included.
    pub total: usize,
}

/// Parameter breakdown for `cfg` with the hop cap already resolved.
pub fn param_breakdown(cfg: &ModelConfig, k_cap: usize) -> ParamBreakdown {
    let d = cfg.hidden;
    let mut matrices = 0usize;
    let mut total = 0usize;

    if !cfg.linear_probe {
        total += cfg.in_dim * d + d; // input projection
        total += d * cfg.out_dim + cfg.out_dim; // output head
    }

    for l in 0..cfg.layers {
        let hops = cfg.hops_at_layer(l, k_cap);
        match cfg.arch {
            Arch::Gcn => {
                matrices += 1;
                total += d * d;
            }
            Arch::DrewGcn => {
                let m = if cfg.weight_sharing { 1 } else { hops };
                matrices += m;
                total += m * d * d;
            }
            Arch::DrewGin => {
                // one self MLP plus hop MLPs, two linear layers each
                let mlps = 1 + if cfg.weight_sharing { 1 } else { hops };
                matrices += 2 * mlps;
                total += mlps * (2 * d * d + 2 * d);
            }
            Arch::DrewGatedGcn => {
                matrices += 4;
                total += 4 * d * d;
            }
            Arch::SpGcn => {
                matrices += 1;
                total += d * d + k_cap; // weight matrix plus raw hop weights
            }
        }
        if cfg.use_batch_norm && !cfg.linear_probe {
            total += 2 * d;
        }
    }

    ParamBreakdown {
        weight_matrices: matrices,
        total,
    }
}

/// Total trainable parameter count (see [`param_breakdown`]).
pub fn count_params(cfg: &ModelConfig, k_cap: usize) -> usize {
    param_breakdown(cfg, k_cap).total
}

/// Largest hidden dimension whose parameter count stays within `target`.
/// `count_at(hidden)` must be nondecreasing in `hidden`.
pub fn solve_hidden(target: usize, count_at: impl Fn(usize) -> usize) -> usize {
    let mut lo = 1usize; // smallest usable width
    if count_at(lo) > target {
        return lo;
    }
    let mut hi = 2usize;
    while count_at(hi) <= target {
        hi *= 2;
        if hi > 1 << 20 {
            return hi / 2;
        }
    }
    // invariant: count(lo) <= target < count(hi)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if count_at(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drew_gcn_matrix_count_is_triangular() {
        let cfg = ModelConfig::new(Arch::DrewGcn, 3, 4, 5, 5)
            .with_k_cap(3)
            .validated()
            .unwrap();
        let b = param_breakdown(&cfg, 3);
        assert_eq!(b.weight_matrices, 6); // 1 + 2 + 3
        // 6 matrices of 16 + in 5*4+4 + head 4*5+5 + bn 3*8
        assert_eq!(b.total, 96 + 24 + 25 + 24);
    }

    #[test]
    fn gcn_matrix_count_is_linear() {
        let cfg = ModelConfig::new(Arch::Gcn, 3, 4, 5, 5).validated().unwrap();
        let b = param_breakdown(&cfg, 1);
        assert_eq!(b.weight_matrices, 3);
    }

    #[test]
    fn depth_20_matrix_ratio_is_ten_and_a_half() {
        let drew = ModelConfig::new(Arch::DrewGcn, 20, 8, 5, 5)
            .with_k_cap(20)
            .validated()
            .unwrap();
        let gcn = ModelConfig::new(Arch::Gcn, 20, 8, 5, 5).validated().unwrap();
        let dm = param_breakdown(&drew, 20).weight_matrices;
        let gm = param_breakdown(&gcn, 1).weight_matrices;
        assert_eq!(dm, 210);
        assert_eq!(gm, 20);
        assert_eq!(dm as f64 / gm as f64, 10.5);
    }

    #[test]
    fn gated_always_shares_weights() {
        let mut cfg = ModelConfig::new(Arch::DrewGatedGcn, 2, 4, 3, 3);
        cfg.weight_sharing = false;
        let cfg = cfg.validated().unwrap();
        assert!(cfg.weight_sharing);
        assert_eq!(param_breakdown(&cfg, 5).weight_matrices, 8);
    }

    #[test]
    fn probe_rejects_unsupported_setups() {
        let mut cfg = ModelConfig::new(Arch::DrewGin, 2, 4, 4, 4);
        cfg.linear_probe = true;
        cfg.use_batch_norm = false;
        assert!(cfg.validated().is_err());

        let mut cfg = ModelConfig::new(Arch::DrewGcn, 2, 4, 3, 4);
        cfg.linear_probe = true;
        cfg.use_batch_norm = false;
        assert!(cfg.validated().is_err(), "in_dim must equal hidden");
    }

    #[test]
    fn solve_hidden_lands_within_one_step() {
        let cfg_at = |h: usize| {
            let cfg = ModelConfig::new(Arch::DrewGcn, 5, h, 5, 5)
                .with_k_cap(5)
                .validated()
                .unwrap();
            count_params(&cfg, 5)
        };
        for target in [500, 5_000, 50_000, 993_541] {
            let h = solve_hidden(target, cfg_at);
            assert!(cfg_at(h) <= target || h == 1);
            assert!(cfg_at(h + 1) > target, "h={h} not maximal for {target}");
        }
    }
}
