//! Named parameter store, layer slot layout, tape binding and checkpoints.

use super::{count_params, Arch, ModelConfig, ModelError};
use crate::tensor::checkpoint::{CheckpointEntry, EntryKind};
use crate::tensor::{init, BnStats, Shape, TRef, Tape, Tensor};
use rand::Rng;

/// Indices into the parameter list for one MLP (two linear layers).
#[derive(Debug, Clone, Copy)]
pub(crate) struct MlpSlots {
    pub l1w: usize,
    pub l1b: usize,
    pub l2w: usize,
    pub l2b: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum LayerSlots {
    Gcn { w: usize },
    DrewGcn { hop_w: Vec<usize> },
    DrewGin { self_mlp: MlpSlots, hop_mlps: Vec<MlpSlots> },
    Gated { w1: usize, w2: usize, w3: usize, w4: usize },
    SpGcn { w: usize, alpha_raw: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct LayerLayout {
    pub slots: LayerSlots,
    /// `(gamma index, beta index, stats index)` when batch norm is on.
    pub bn: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub in_proj: Option<(usize, usize)>,
    pub head: Option<(usize, usize)>,
    pub layers: Vec<LayerLayout>,
}

/// All trainable tensors of a model plus batch-norm running statistics,
/// with stable names for checkpoints and the optimizer.
#[derive(Clone)]
pub struct ModelParams {
    config: ModelConfig,
    k_cap: usize,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    stats: Vec<(String, BnStats)>,
    layout: Layout,
}

/// A parameter set bound onto a tape for one forward pass. Batch-norm
/// statistics are working copies; fold them back with
/// [`ModelParams::absorb_bn`] after a training pass.
pub struct Binding {
    pub(crate) refs: Vec<TRef>,
    pub(crate) bn_stats: Vec<BnStats>,
}

impl Binding {
    /// Tape leaves, aligned with [`ModelParams::tensors`].
    pub fn param_refs(&self) -> &[TRef] {
        &self.refs
    }
}

struct ParamBuilder<'r, R: Rng> {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    probe: bool,
    rng: &'r mut R,
}

impl<'r, R: Rng> ParamBuilder<'r, R> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t.with_grad());
        self.tensors.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let t = if self.probe {
            debug_assert_eq!(rows, cols);
            Tensor::eye(rows)
        } else {
            init::glorot_uniform(rows, cols, self.rng)
        };
        self.push(name, t)
    }

    fn zeros(&mut self, name: String, len: usize) -> usize {
        self.push(name, Tensor::zeros(Shape::vector(len)))
    }

    fn mlp(&mut self, prefix: &str, d: usize) -> MlpSlots {
        MlpSlots {
            l1w: self.weight(format!("{prefix}.l1.w"), d, d),
            l1b: self.zeros(format!("{prefix}.l1.b"), d),
            l2w: self.weight(format!("{prefix}.l2.w"), d, d),
            l2b: self.zeros(format!("{prefix}.l2.b"), d),
        }
    }
}

impl ModelParams {
    /// Initializes parameters for `cfg` at a resolved hop cap.
    ///
    /// Weights are Glorot-uniform, biases zero, norm scales one. In probe
    /// mode every weight is the identity. Draw order is fixed, so one seed
    /// gives one parameter vector.
    pub fn init<R: Rng>(cfg: &ModelConfig, k_cap: usize, rng: &mut R) -> Result<Self, ModelError> {
        let cfg = cfg.clone().validated()?;
        let d = cfg.hidden;
        let mut b = ParamBuilder {
            names: Vec::new(),
            tensors: Vec::new(),
            probe: cfg.linear_probe,
            rng,
        };
        let mut stats: Vec<(String, BnStats)> = Vec::new();

        let in_proj = if cfg.linear_probe {
            None
        } else {
            let w = b.weight("in_proj.w".into(), cfg.in_dim, d);
            let bias = b.zeros("in_proj.b".into(), d);
            Some((w, bias))
        };

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let hops = cfg.hops_at_layer(l, k_cap);
            let slots = match cfg.arch {
                Arch::Gcn => LayerSlots::Gcn {
                    w: b.weight(format!("layer{l}.w"), d, d),
                },
                Arch::DrewGcn => {
                    let hop_w = if cfg.weight_sharing {
                        vec![b.weight(format!("layer{l}.shared.w"), d, d); hops]
                    } else {
                        (1..=hops)
                            .map(|k| b.weight(format!("layer{l}.hop{k}.w"), d, d))
                            .collect()
                    };
                    LayerSlots::DrewGcn { hop_w }
                }
                Arch::DrewGin => {
                    let self_mlp = b.mlp(&format!("layer{l}.self"), d);
                    let hop_mlps = if cfg.weight_sharing {
                        vec![b.mlp(&format!("layer{l}.shared"), d); hops]
                    } else {
                        (1..=hops)
                            .map(|k| b.mlp(&format!("layer{l}.hop{k}"), d))
                            .collect()
                    };
                    LayerSlots::DrewGin { self_mlp, hop_mlps }
                }
                Arch::DrewGatedGcn => LayerSlots::Gated {
                    w1: b.weight(format!("layer{l}.w1"), d, d),
                    w2: b.weight(format!("layer{l}.w2"), d, d),
                    w3: b.weight(format!("layer{l}.w3"), d, d),
                    w4: b.weight(format!("layer{l}.w4"), d, d),
                },
                Arch::SpGcn => LayerSlots::SpGcn {
                    w: b.weight(format!("layer{l}.w"), d, d),
                    alpha_raw: b.zeros(format!("layer{l}.alpha_raw"), k_cap),
                },
            };

            let bn = if cfg.use_batch_norm && !cfg.linear_probe {
                let gamma = b.push(
                    format!("layer{l}.bn.gamma"),
                    Tensor::filled(Shape::vector(d), 1.0),
                );
                let beta = b.zeros(format!("layer{l}.bn.beta"), d);
                stats.push((format!("layer{l}.bn"), BnStats::new(d)));
                Some((gamma, beta, stats.len() - 1))
            } else {
                None
            };

            layers.push(LayerLayout { slots, bn });
        }

        let head = if cfg.linear_probe {
            None
        } else {
            let w = b.weight("head.w".into(), d, cfg.out_dim);
            let bias = b.zeros("head.b".into(), cfg.out_dim);
            Some((w, bias))
        };

        let params = ModelParams {
            config: cfg,
            k_cap,
            names: b.names,
            tensors: b.tensors,
            stats,
            layout: Layout {
                in_proj,
                head,
                layers,
            },
        };
        debug_assert_eq!(
            params.total_params(),
            count_params(&params.config, k_cap),
            "parameter accounting must match construction"
        );
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn k_cap(&self) -> usize {
        self.k_cap
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Scalar count over all trainable tensors.
    pub fn total_params(&self) -> usize {
        // shared slots alias one tensor, so sum over stored tensors
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<&Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.tensors[i])
    }

    pub fn tensor_by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    /// Records every tensor as a tape leaf and clones working batch-norm
    /// stats for the pass.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            refs: self.tensors.iter().map(|t| tape.leaf(t)).collect(),
            bn_stats: self.stats.iter().map(|(_, s)| s.clone()).collect(),
        }
    }

    /// Folds updated running statistics back after a training-mode pass.
    pub fn absorb_bn(&mut self, binding: &Binding) {
        for ((_, dst), src) in self.stats.iter_mut().zip(&binding.bn_stats) {
            *dst = src.clone();
        }
    }

    /// Accumulates tape leaf gradients into the parameters' `grad` fields.
    pub fn accumulate_grads(&mut self, tape: &Tape, binding: &Binding) {
        for (t, &r) in self.tensors.iter_mut().zip(&binding.refs) {
            if let Some(g) = tape.grad(r) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Checkpoint entries: every parameter plus running statistics.
    pub fn to_checkpoint(&self) -> Vec<CheckpointEntry> {
        let mut entries: Vec<CheckpointEntry> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| CheckpointEntry {
                name: name.clone(),
                kind: EntryKind::Param,
                shape: t.shape.0.clone(),
                data: t.data.clone(),
            })
            .collect();
        for (name, s) in &self.stats {
            entries.push(CheckpointEntry {
                name: format!("{name}.running_mean"),
                kind: EntryKind::Buffer,
                shape: vec![s.mean.len()],
                data: s.mean.clone(),
            });
            entries.push(CheckpointEntry {
                name: format!("{name}.running_var"),
                kind: EntryKind::Buffer,
                shape: vec![s.var.len()],
                data: s.var.clone(),
            });
        }
        entries
    }

    /// Rebuilds parameters from checkpoint entries; every name must match
    /// the layout implied by `cfg` and `k_cap`, with identical shapes.
    pub fn from_checkpoint(
        cfg: &ModelConfig,
        k_cap: usize,
        entries: &[CheckpointEntry],
    ) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        let mut skeleton = ModelParams::init(cfg, k_cap, &mut rand_chacha::ChaCha12Rng::seed_from_u64(0))?;
        let mut filled = vec![false; skeleton.tensors.len()];
        let mut stats_filled = vec![(false, false); skeleton.stats.len()];
        for e in entries {
            match e.kind {
                EntryKind::Param => {
                    let i = skeleton
                        .names
                        .iter()
                        .position(|n| n == &e.name)
                        .ok_or_else(|| {
                            ModelError::Config(format!("checkpoint has unknown tensor {}", e.name))
                        })?;
                    if skeleton.tensors[i].shape.0 != e.shape {
                        return Err(ModelError::Config(format!(
                            "checkpoint shape mismatch for {}",
                            e.name
                        )));
                    }
                    skeleton.tensors[i].data = e.data.clone();
                    filled[i] = true;
                }
                EntryKind::Buffer => {
                    let (base, is_mean) = match e.name.strip_suffix(".running_mean") {
                        Some(base) => (base, true),
                        None => match e.name.strip_suffix(".running_var") {
                            Some(base) => (base, false),
                            None => {
                                return Err(ModelError::Config(format!(
                                    "checkpoint has unknown buffer {}",
                                    e.name
                                )))
                            }
                        },
                    };
                    let i = skeleton
                        .stats
                        .iter()
                        .position(|(n, _)| n == base)
                        .ok_or_else(|| {
                            ModelError::Config(format!("checkpoint has unknown buffer {}", e.name))
                        })?;
                    let s = &mut skeleton.stats[i].1;
                    if e.shape != [s.mean.len()] {
                        return Err(ModelError::Config(format!(
                            "checkpoint shape mismatch for {}",
                            e.name
                        )));
                    }
                    if is_mean {
                        s.mean = e.data.clone();
                        stats_filled[i].0 = true;
                    } else {
                        s.var = e.data.clone();
                        stats_filled[i].1 = true;
                    }
                }
            }
        }
        if let Some(i) = filled.iter().position(|&f| !f) {
            return Err(ModelError::Config(format!(
                "checkpoint is missing tensor {}",
                skeleton.names[i]
            )));
        }
        if let Some(i) = stats_filled.iter().position(|&(m, v)| !m || !v) {
            return Err(ModelError::Config(format!(
                "checkpoint is missing running stats for {}",
                skeleton.stats[i].0
            )));
        }
        Ok(skeleton)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::DelayPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(42)
    }

    #[test]
    fn counts_match_construction_across_archs() {
        for arch in [
            Arch::Gcn,
            Arch::DrewGcn,
            Arch::DrewGin,
            Arch::DrewGatedGcn,
            Arch::SpGcn,
        ] {
            for bn in [true, false] {
                let mut cfg = ModelConfig::new(arch, 4, 6, 3, 5).with_nu(DelayPolicy::finite(1));
                cfg.use_batch_norm = bn;
                let cfg = cfg.validated().unwrap();
                let p = ModelParams::init(&cfg, 3, &mut rng()).unwrap();
                assert_eq!(
                    p.total_params(),
                    count_params(&cfg, 3),
                    "arch {arch:?} bn {bn}"
                );
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig::new(Arch::DrewGcn, 3, 4, 2, 2).validated().unwrap();
        let a = ModelParams::init(&cfg, 3, &mut rng()).unwrap();
        let b = ModelParams::init(&cfg, 3, &mut rng()).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let cfg = ModelConfig::new(Arch::DrewGin, 2, 3, 2, 4).validated().unwrap();
        let mut p = ModelParams::init(&cfg, 2, &mut rng()).unwrap();
        // make running stats non-default so the round trip is meaningful
        p.stats[0].1.mean = vec![0.5; 3];
        let entries = p.to_checkpoint();
        let q = ModelParams::from_checkpoint(&cfg, 2, &entries).unwrap();
        for (x, y) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(x.data, y.data);
        }
        assert_eq!(p.stats[0].1, q.stats[0].1);
    }

    #[test]
    fn checkpoint_with_missing_tensor_is_rejected() {
        let cfg = ModelConfig::new(Arch::Gcn, 2, 3, 2, 2).validated().unwrap();
        let p = ModelParams::init(&cfg, 1, &mut rng()).unwrap();
        let mut entries = p.to_checkpoint();
        entries.remove(0);
        assert!(ModelParams::from_checkpoint(&cfg, 1, &entries).is_err());
    }

    #[test]
    fn probe_weights_are_identity() {
        let mut cfg = ModelConfig::new(Arch::DrewGcn, 2, 3, 3, 3);
        cfg.linear_probe = true;
        cfg.use_batch_norm = false;
        let cfg = cfg.validated().unwrap();
        let p = ModelParams::init(&cfg, 2, &mut rng()).unwrap();
        let w = p.tensor_by_name("layer0.hop1.w").unwrap();
        assert_eq!(w.data, Tensor::eye(3).data);
        assert!(p.tensor_by_name("in_proj.w").is_none());
    }
}
