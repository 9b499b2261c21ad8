//! Ring-transfer benchmark: dataset generation, the training loop, and the
//! model/ring-length sweep.
//!
//! Each instance is a chordless cycle of length `k` with a source node at
//! index 0 carrying a one-hot class label and a target node at the antipode
//! `floor(k/2)`; all other feature rows are the uniform constant `1/C`. The
//! task is to predict the planted label from the readout node.

use crate::graph::{gen, Graph, GraphError};
use crate::models::{
    self, count_params, forward_embeddings, readout_mean, readout_node, solve_hidden, Arch,
    HopContext, ModelConfig, ModelError, ModelParams,
};
use crate::schedule::DelayPolicy;
use crate::tensor::{AdamConfig, AdamState, Shape, Tape, Tensor, TensorError};
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Hidden width of the reference models whose parameter count the rewired
/// models are budget-matched against.
pub const REFERENCE_HIDDEN: usize = 256;

/// Training aborts when the loss exceeds this guard.
pub const DIVERGENCE_GUARD: f64 = 1e6;

#[derive(Debug, Error)]
pub enum RingError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
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

/// Which node's embedding feeds the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Target,
    Source,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RingInstance {
    pub label: u32,
    pub split: Split,
}

/// Generated benchmark data. All instances share the cycle topology; only
/// the planted source label differs.
#[derive(Debug, Clone)]
pub struct RingTransferDataset {
    pub ring_len: usize,
    pub classes: usize,
    pub seed: u64,
    pub instances: Vec<RingInstance>,
}

/// Generates `n` instances of ring length `ring_len` with `classes` labels.
///
/// Splits are 80:10:10 (train gets the ceiling). Labels are balanced
/// within each split up to rounding and shuffled deterministically.
pub fn gen_ring_transfer(
    n: usize,
    ring_len: usize,
    classes: usize,
    seed: u64,
) -> Result<RingTransferDataset, RingError> {
    if ring_len < 3 {
        return Err(RingError::Config(format!(
            "ring length must be at least 3, got {ring_len}"
        )));
    }
    if classes < 2 {
        return Err(RingError::Config("need at least 2 classes".into()));
    }
    if n < classes {
        return Err(RingError::Config(format!(
            "need at least one instance per class ({classes}), got {n}"
        )));
    }
    let train = (4 * n).div_ceil(5);
    let rest = n - train;
    let val = rest / 2;
    let test = rest - val;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    for (split, size) in [
        (Split::Train, train),
        (Split::Val, val),
        (Split::Test, test),
    ] {
        let mut labels: Vec<u32> = (0..size).map(|i| (i % classes) as u32).collect();
        labels.shuffle(&mut rng);
        instances.extend(labels.into_iter().map(|label| RingInstance { label, split }));
    }

    Ok(RingTransferDataset {
        ring_len,
        classes,
        seed,
        instances,
    })
}

impl RingTransferDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn source_node(&self) -> u32 {
        0
    }

    pub fn target_node(&self) -> u32 {
        (self.ring_len / 2) as u32
    }

    pub fn graph(&self) -> Graph {
        gen::cycle(self.ring_len)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Disjoint-union feature matrix for the chosen instances: one block of
    /// `ring_len` rows per instance, source row one-hot, the rest `1/C`.
    pub fn features(&self, indices: &[usize]) -> Tensor {
        let (k, c) = (self.ring_len, self.classes);
        let uniform = 1.0 / c as f64;
        let mut data = vec![uniform; indices.len() * k * c];
        for (b, &idx) in indices.iter().enumerate() {
            let label = self.instances[idx].label as usize;
            let src_row = b * k; // source is node 0 of each block
            for col in 0..c {
                data[src_row * c + col] = if col == label { 1.0 } else { 0.0 };
            }
        }
        Tensor::new(Shape::matrix(indices.len() * k, c), data).expect("sized to shape")
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<u32> {
        indices.iter().map(|&i| self.instances[i].label).collect()
    }

    /// Rows of the readout nodes within the disjoint union of `count`
    /// instances.
    pub fn readout_rows(&self, count: usize, readout: Readout) -> Vec<u32> {
        let node = match readout {
            Readout::Target => self.target_node(),
            Readout::Source => self.source_node(),
            Readout::Mean => unreachable!("mean readout pools all rows"),
        };
        (0..count as u32)
            .map(|b| b * self.ring_len as u32 + node)
            .collect()
    }

    /// Writes one edge-list file per instance plus a line-delimited JSON
    /// manifest with id, label, source, target, and split.
    pub fn dump(&self, dir: &Path) -> Result<(), RingError> {
        std::fs::create_dir_all(dir)?;
        let g = self.graph();
        let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
        for (id, inst) in self.instances.iter().enumerate() {
            let name = format!("instance_{id:05}.edges");
            crate::graph::io::save_edge_list(&g, &dir.join(&name))?;
            let line = serde_json::json!({
                "id": id,
                "file": name,
                "label": inst.label,
                "source": self.source_node(),
                "target": self.target_node(),
                "split": inst.split,
            });
            writeln!(manifest, "{line}")?;
        }
        manifest.flush()?;
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Stop once validation accuracy reaches 1.0. The best-checkpoint rule
    /// keeps the first epoch that attains the maximum, so later epochs
    /// cannot change the reported test accuracy; this only saves time.
    #[serde(default)]
    pub stop_when_val_perfect: bool,
}

impl TrainHyper {
    pub fn new(seed: u64) -> Self {
        TrainHyper {
            lr: 0.01,
            epochs: 50,
            batch: 32,
            seed,
            stop_when_val_perfect: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub instances: usize,
    pub ring_len: usize,
    pub classes: usize,
    pub seed: u64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRunResult {
    pub version: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub k_cap: usize,
    pub param_count: usize,
    pub dataset: DatasetInfo,
    pub hyper: TrainHyper,
    pub readout: Readout,
    pub train_losses: Vec<f64>,
    pub val_accuracies: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub diverged: bool,
    pub stopped_early: bool,
    pub seconds: f64,
}

/// Shared per-ring-length compute: graph, hop index, contexts per batch
/// size.
pub struct RingContexts {
    base: HopContext,
    by_batch: HashMap<usize, Arc<HopContext>>,
}

impl RingContexts {
    pub fn new(cfg: &ModelConfig, ds: &RingTransferDataset) -> Result<Self, RingError> {
        let g = ds.graph();
        let hi = crate::graph::compute_hop_index(&g, (ds.ring_len / 2).max(1));
        let base = HopContext::build(cfg, &g, &hi)?;
        Ok(RingContexts {
            base,
            by_batch: HashMap::new(),
        })
    }

    pub fn for_batch(&mut self, b: usize) -> Arc<HopContext> {
        Arc::clone(
            self.by_batch
                .entry(b)
                .or_insert_with(|| Arc::new(self.base.replicate(b))),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_logits(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &mut models::Binding,
    ctx: &HopContext,
    ds: &RingTransferDataset,
    indices: &[usize],
    readout: Readout,
    training: bool,
) -> Result<crate::tensor::TRef, RingError> {
    let x = ds.features(indices);
    let xr = tape.leaf(&x);
    let emb = forward_embeddings(tape, params, binding, ctx, xr, training)?;
    let logits = match readout {
        Readout::Mean => {
            // mean pooling collapses the whole union; pool per instance by
            // gathering each block's rows is equivalent to node readout on
            // the per-instance mean. Instances are independent blocks, so
            // pool each block separately.
            let mut per_instance = Vec::with_capacity(indices.len());
            for b in 0..indices.len() {
                let rows: Vec<u32> = (0..ds.ring_len as u32)
                    .map(|r| (b * ds.ring_len) as u32 + r)
                    .collect();
                let block = tape.gather_rows(emb, Arc::new(rows))?;
                let pooled = readout_mean(tape, params, binding, block)?;
                per_instance.push(pooled);
            }
            tape.concat(&per_instance, 0)?
        }
        _ => {
            let rows = ds.readout_rows(indices.len(), readout);
            readout_node(tape, params, binding, emb, &rows)?
        }
    };
    Ok(logits)
}

/// Accuracy of `params` over one split, evaluated with frozen batch norm.
pub fn evaluate(
    params: &ModelParams,
    ctxs: &mut RingContexts,
    ds: &RingTransferDataset,
    split: Split,
    batch: usize,
    readout: Readout,
) -> Result<f64, RingError> {
    let indices = ds.split_indices(split);
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(batch) {
        let ctx = ctxs.for_batch(chunk.len());
        let mut tape = Tape::new();
        let mut binding = params.bind(&mut tape);
        let logits = batch_logits(
            &mut tape,
            params,
            &mut binding,
            &ctx,
            ds,
            chunk,
            readout,
            false,
        )?;
        let values = tape.value(logits);
        let c = ds.classes;
        for (row, &idx) in chunk.iter().enumerate() {
            let scores = &values[row * c..(row + 1) * c];
            let pred = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(j, _)| j as u32)
                .expect("nonempty row");
            if pred == ds.instances[idx].label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Trains `cfg` on the dataset: Adam on cross-entropy at the readout node,
/// best-validation checkpointing, deterministic for a given seed.
pub fn train(
    cfg: &ModelConfig,
    ds: &RingTransferDataset,
    hyper: &TrainHyper,
    readout: Readout,
) -> Result<(TrainRunResult, ModelParams), RingError> {
    if cfg.out_dim != ds.classes {
        return Err(RingError::Config(format!(
            "model out_dim {} must match class count {}",
            cfg.out_dim, ds.classes
        )));
    }
    if cfg.in_dim != ds.classes {
        return Err(RingError::Config(format!(
            "model in_dim {} must match feature dimension {}",
            cfg.in_dim, ds.classes
        )));
    }
    let start = std::time::Instant::now();
    let mut ctxs = RingContexts::new(cfg, ds)?;
    let k_cap = ctxs.base.k_cap();
    let mut params = ModelParams::init(
        cfg,
        k_cap,
        &mut ChaCha12Rng::seed_from_u64(derive_seed(hyper.seed, "init")),
    )?;
    let mut adam = AdamState::new(AdamConfig::with_lr(hyper.lr), params.tensors());
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(derive_seed(hyper.seed, "shuffle"));

    let mut train_indices = ds.split_indices(Split::Train);
    let mut train_losses = Vec::with_capacity(hyper.epochs);
    let mut val_accuracies = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut diverged = false;
    let mut stopped_early = false;

    'epochs: for epoch in 0..hyper.epochs {
        train_indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_indices.chunks(hyper.batch.max(1)) {
            let ctx = ctxs.for_batch(chunk.len());
            let mut tape = Tape::new();
            let mut binding = params.bind(&mut tape);
            let logits = batch_logits(
                &mut tape,
                &params,
                &mut binding,
                &ctx,
                ds,
                chunk,
                readout,
                true,
            )?;
            let labels = ds.labels(chunk);
            let loss = tape.cross_entropy_logits(logits, &labels)?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() || loss_value > DIVERGENCE_GUARD {
                diverged = true;
                train_losses.push(loss_value);
                break 'epochs;
            }
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &binding);
            params.absorb_bn(&binding);
            adam.step(params.tensors_mut())?;
            params.zero_grads();
            epoch_loss += loss_value;
            batches += 1;
        }
        train_losses.push(epoch_loss / batches.max(1) as f64);

        let val_acc = evaluate(&params, &mut ctxs, ds, Split::Val, hyper.batch, readout)?;
        val_accuracies.push(val_acc);
        let improved = match &best {
            Some((_, best_acc, _)) => val_acc > *best_acc,
            None => true,
        };
        if improved {
            best = Some((epoch, val_acc, params.clone()));
        }
        if hyper.stop_when_val_perfect && val_acc >= 1.0 {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, val_accuracy, best_params) = match best {
        Some((e, acc, p)) => (Some(e), acc, p),
        None => (None, f64::NAN, params.clone()),
    };
    let test_accuracy = if diverged {
        f64::NAN
    } else {
        evaluate(&best_params, &mut ctxs, ds, Split::Test, hyper.batch, readout)?
    };

    let result = TrainRunResult {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: hyper.seed,
        model: cfg.clone(),
        k_cap,
        param_count: params.total_params(),
        dataset: DatasetInfo {
            instances: ds.len(),
            ring_len: ds.ring_len,
            classes: ds.classes,
            seed: ds.seed,
        },
        hyper: hyper.clone(),
        readout,
        train_losses,
        val_accuracies,
        best_epoch,
        val_accuracy,
        test_accuracy,
        diverged,
        stopped_early,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((result, best_params))
}

// ---- sweep ----------------------------------------------------------------

/// One sweep entry: a trainable architecture at a delay setting, or the
/// untrained constant-predictor baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepModel {
    Constant,
    Model { arch: Arch, nu: DelayPolicy },
}

impl SweepModel {
    /// Parses `constant`, `gcn`, `sp_gcn`, or `<arch>:nu=<n|inf>`.
    pub fn parse(s: &str) -> Result<Self, RingError> {
        if s == "constant" {
            return Ok(SweepModel::Constant);
        }
        let (arch_str, nu) = match s.split_once(":nu=") {
            Some((a, nu_str)) => {
                let nu = if nu_str.eq_ignore_ascii_case("inf") {
                    DelayPolicy::Infinite
                } else {
                    let v: u32 = nu_str
                        .parse()
                        .map_err(|_| RingError::Config(format!("bad nu in {s:?}")))?;
                    if v == 0 {
                        return Err(RingError::Config("nu must be at least 1".into()));
                    }
                    DelayPolicy::Finite(v)
                };
                (a, nu)
            }
            None => (s, DelayPolicy::Infinite),
        };
        let arch: Arch = arch_str
            .parse()
            .map_err(RingError::Config)?;
        Ok(SweepModel::Model { arch, nu })
    }

    pub fn label(&self) -> String {
        match self {
            SweepModel::Constant => "constant".into(),
            SweepModel::Model { arch, nu } => match arch {
                Arch::Gcn | Arch::SpGcn => arch.as_str().into(),
                _ => format!("{}:nu={}", arch.as_str(), nu),
            },
        }
    }
}

/// Parameter count of the reference model (`gcn` at hidden 256) for ring
/// length `k`; rewired models are solved to fit under it.
pub fn reference_param_count(ring_len: usize, classes: usize) -> usize {
    let layers = (ring_len / 2).max(1);
    let cfg = ModelConfig::new(Arch::Gcn, layers, REFERENCE_HIDDEN, classes, classes);
    count_params(&cfg, 1)
}

/// Budget-matched config for a sweep entry at ring length `k`: depth
/// `floor(k/2)`, reference hidden width for the classical models, solved
/// hidden width for the rewired ones.
pub fn budget_matched_config(
    model: &SweepModel,
    ring_len: usize,
    classes: usize,
) -> Result<ModelConfig, RingError> {
    let SweepModel::Model { arch, nu } = model else {
        return Err(RingError::Config(
            "constant baseline has no model config".into(),
        ));
    };
    let layers = (ring_len / 2).max(1);
    let k_cap = (ring_len / 2).max(1);
    let hidden = match arch {
        Arch::Gcn | Arch::SpGcn => REFERENCE_HIDDEN,
        _ => {
            let target = reference_param_count(ring_len, classes);
            solve_hidden(target, |h| {
                let cfg = ModelConfig::new(*arch, layers, h, classes, classes)
                    .with_nu(*nu)
                    .with_k_cap(k_cap);
                count_params(&cfg, k_cap)
            })
        }
    };
    let cfg = ModelConfig::new(*arch, layers, hidden, classes, classes)
        .with_nu(*nu)
        .with_k_cap(if matches!(arch, Arch::Gcn) { 1 } else { k_cap });
    Ok(cfg.validated()?)
}

/// One finished sweep cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub model: String,
    pub ring_len: usize,
    pub layers: usize,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub params: usize,
    pub seconds: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummaryRow {
    pub model: String,
    pub ring_len: usize,
    pub layers: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub repeats: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub version: String,
    pub base_seed: u64,
    pub cells: Vec<SweepCell>,
}

/// Settings for a full sweep.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub models: Vec<SweepModel>,
    pub ring_lengths: Vec<usize>,
    pub repeats: usize,
    pub instances: usize,
    pub classes: usize,
    pub base_seed: u64,
    pub readout: Readout,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub stop_when_val_perfect: bool,
}

impl SweepSettings {
    pub fn new(base_seed: u64) -> Self {
        SweepSettings {
            models: vec![
                SweepModel::parse("gcn").expect("known"),
                SweepModel::parse("sp_gcn").expect("known"),
                SweepModel::parse("drew_gcn:nu=inf").expect("known"),
                SweepModel::parse("drew_gcn:nu=1").expect("known"),
                SweepModel::Constant,
            ],
            ring_lengths: vec![10, 20, 30],
            repeats: 3,
            instances: 2000,
            classes: 5,
            base_seed,
            readout: Readout::Target,
            epochs: 50,
            lr: 0.01,
            batch: 32,
            stop_when_val_perfect: false,
        }
    }
}

fn constant_baseline_cell(
    ds: &RingTransferDataset,
    ring_len: usize,
    seed: u64,
) -> SweepCell {
    // an untrained constant predictor always answers class 0
    let acc = |split: Split| {
        let idx = ds.split_indices(split);
        let hit = idx
            .iter()
            .filter(|&&i| ds.instances[i].label == 0)
            .count();
        hit as f64 / idx.len().max(1) as f64
    };
    SweepCell {
        model: "constant".into(),
        ring_len,
        layers: (ring_len / 2).max(1),
        seed,
        val_acc: acc(Split::Val),
        test_acc: acc(Split::Test),
        params: 0,
        seconds: 0.0,
        diverged: false,
    }
}

/// Runs every (model, ring length, repeat) cell. Cells are independent and
/// run in parallel; all seeds derive from the cell identity, so the table
/// is reproducible regardless of scheduling.
pub fn sweep(settings: &SweepSettings) -> Result<SweepTable, RingError> {
    let mut jobs = Vec::new();
    for model in &settings.models {
        for &k in &settings.ring_lengths {
            for rep in 0..settings.repeats {
                jobs.push((model.clone(), k, rep));
            }
        }
    }

    let cells: Result<Vec<SweepCell>, RingError> = jobs
        .into_par_iter()
        .map(|(model, k, rep)| {
            let data_seed = derive_seed(settings.base_seed, &format!("data k={k} rep={rep}"));
            let ds = gen_ring_transfer(settings.instances, k, settings.classes, data_seed)?;
            let cell_seed = derive_seed(
                settings.base_seed,
                &format!("model={} k={k} rep={rep}", model.label()),
            );
            match &model {
                SweepModel::Constant => Ok(constant_baseline_cell(&ds, k, cell_seed)),
                SweepModel::Model { .. } => {
                    let cfg = budget_matched_config(&model, k, settings.classes)?;
                    let hyper = TrainHyper {
                        lr: settings.lr,
                        epochs: settings.epochs,
                        batch: settings.batch,
                        seed: cell_seed,
                        stop_when_val_perfect: settings.stop_when_val_perfect,
                    };
                    let (result, _) = train(&cfg, &ds, &hyper, settings.readout)?;
                    Ok(SweepCell {
                        model: model.label(),
                        ring_len: k,
                        layers: cfg.layers,
                        seed: cell_seed,
                        val_acc: result.val_accuracy,
                        test_acc: result.test_accuracy,
                        params: result.param_count,
                        seconds: result.seconds,
                        diverged: result.diverged,
                    })
                }
            }
        })
        .collect();

    Ok(SweepTable {
        version: env!("CARGO_PKG_VERSION").to_string(),
        base_seed: settings.base_seed,
        cells: cells?,
    })
}

impl SweepTable {
    /// Mean and sample standard deviation of test accuracy per
    /// (model, ring length), diverged cells excluded and counted.
    pub fn summarize(&self) -> Vec<SweepSummaryRow> {
        let mut order: Vec<(String, usize, usize)> = Vec::new();
        for c in &self.cells {
            let key = (c.model.clone(), c.ring_len, c.layers);
            if !order.contains(&key) {
                order.push(key);
            }
        }
        order
            .into_iter()
            .map(|(model, ring_len, layers)| {
                let accs: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.model == model && c.ring_len == ring_len && !c.diverged)
                    .map(|c| c.test_acc)
                    .collect();
                let failed = self
                    .cells
                    .iter()
                    .filter(|c| c.model == model && c.ring_len == ring_len && c.diverged)
                    .count();
                let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
                let std = if accs.len() > 1 {
                    (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                        / (accs.len() - 1) as f64)
                        .sqrt()
                } else {
                    0.0
                };
                SweepSummaryRow {
                    model,
                    ring_len,
                    layers,
                    mean_test_acc: mean,
                    std_test_acc: std,
                    repeats: accs.len(),
                    failed,
                }
            })
            .collect()
    }

    pub fn mean_test_accuracy(&self, model: &str, ring_len: usize) -> Option<f64> {
        self.summarize()
            .into_iter()
            .find(|r| r.model == model && r.ring_len == ring_len)
            .map(|r| r.mean_test_acc)
    }
}

/// CSV column order is frozen: `model,k,L,seed,val_acc,test_acc,params,seconds`.
pub const SWEEP_CSV_HEADER: &str = "model,k,L,seed,val_acc,test_acc,params,seconds";

/// Appends cells to a results CSV, writing the version comment and header
/// for a new file.
pub fn append_sweep_csv(path: &Path, table: &SweepTable) -> Result<(), RingError> {
    let fresh = !path.exists();
    let mut f = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?,
    );
    if fresh {
        writeln!(
            f,
            "# drew version={} base_seed={}",
            table.version, table.base_seed
        )?;
        writeln!(f, "{SWEEP_CSV_HEADER}")?;
    }
    for c in &table.cells {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{:.3}",
            c.model, c.ring_len, c.layers, c.seed, c.val_acc, c.test_acc, c.params, c.seconds
        )?;
    }
    f.flush()?;
    Ok(())
}
