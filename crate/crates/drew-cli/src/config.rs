//! Run configuration: sectioned TOML with a strict schema.
//!
//! Unknown keys anywhere are errors, so typos fail loudly. Every command
//! that writes outputs echoes the fully resolved config next to them;
//! feeding the echo back reproduces the run.

use anyhow::{bail, Context, Result};
use drew::models::{Arch, ModelConfig};
use drew::ring::Readout;
use drew::schedule::DelayPolicy;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every internal stream derives from it.
    pub seed: Option<u64>,
    /// Output directory for results, echoes and checkpoints.
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivitySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    pub layers: usize,
    /// Width; resolved by the budget solver when `train.budget_match` is
    /// set and may then be omitted.
    pub hidden: Option<usize>,
    #[serde(default = "default_nu")]
    pub nu: DelayPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_cap: Option<usize>,
    /// Feature dimension; defaults to the dataset's class count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_sharing: Option<bool>,
    #[serde(default = "default_true")]
    pub use_batch_norm: bool,
    #[serde(default)]
    pub gin_eps: f64,
    #[serde(default = "default_gate_eps")]
    pub gate_eps: f64,
    #[serde(default)]
    pub linear_probe: bool,
}

fn default_nu() -> DelayPolicy {
    DelayPolicy::Infinite
}

fn default_true() -> bool {
    true
}

fn default_gate_eps() -> f64 {
    1e-6
}

impl ModelSection {
    /// Materializes a [`ModelConfig`], filling dimension defaults from the
    /// dataset's class count when present.
    pub fn to_model_config(&self, classes: Option<usize>) -> Result<ModelConfig> {
        let hidden = self
            .hidden
            .context("model.hidden is required (or enable train.budget_match)")?;
        let dim = |explicit: Option<usize>, what: &str| -> Result<usize> {
            explicit
                .or(classes)
                .with_context(|| format!("model.{what} is required without a dataset section"))
        };
        let mut cfg = ModelConfig::new(
            self.arch,
            self.layers,
            hidden,
            dim(self.in_dim, "in_dim")?,
            dim(self.out_dim, "out_dim")?,
        )
        .with_nu(self.nu);
        cfg.k_cap = self.k_cap;
        if let Some(ws) = self.weight_sharing {
            cfg.weight_sharing = ws;
        }
        cfg.use_batch_norm = self.use_batch_norm;
        cfg.gin_eps = self.gin_eps;
        cfg.gate_eps = self.gate_eps;
        cfg.linear_probe = self.linear_probe;
        Ok(cfg.validated()?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_instances")]
    pub instances: usize,
    pub ring_len: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
}

fn default_instances() -> usize {
    2000
}

fn default_classes() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub readout: Readout,
    /// Solve the hidden width so the parameter count matches the
    /// reference classical model for this ring length.
    #[serde(default)]
    pub budget_match: bool,
    #[serde(default)]
    pub stop_when_val_perfect: bool,
    /// Also write the generated dataset (edge lists plus manifest).
    #[serde(default)]
    pub dump_dataset: bool,
}

pub fn default_lr() -> f64 {
    0.01
}

pub fn default_epochs() -> usize {
    50
}

pub fn default_batch() -> usize {
    32
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: default_lr(),
            epochs: default_epochs(),
            batch: default_batch(),
            readout: Readout::default(),
            budget_match: false,
            stop_when_val_perfect: false,
            dump_dataset: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_split() -> String {
    "test".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_sweep_models")]
    pub models: Vec<String>,
    #[serde(default = "default_ring_lengths")]
    pub ring_lengths: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub stop_when_val_perfect: bool,
}

fn default_sweep_models() -> Vec<String> {
    ["gcn", "sp_gcn", "drew_gcn:nu=inf", "drew_gcn:nu=1", "constant"]
        .map(String::from)
        .to_vec()
}

fn default_ring_lengths() -> Vec<usize> {
    vec![10, 20, 30]
}

fn default_repeats() -> usize {
    3
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            models: default_sweep_models(),
            ring_lengths: default_ring_lengths(),
            repeats: default_repeats(),
            instances: default_instances(),
            classes: default_classes(),
            lr: default_lr(),
            epochs: default_epochs(),
            batch: default_batch(),
            readout: Readout::default(),
            stop_when_val_perfect: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    #[serde(default = "default_mode")]
    pub mode: SensitivityMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSource>,
    /// Depth to analyze; defaults to the model depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upto_layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    Jacobian,
    Decay,
}

fn default_mode() -> SensitivityMode {
    SensitivityMode::Jacobian
}

/// Where the analyzed graph comes from: a generator or an edge-list file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum GraphSource {
    File { path: PathBuf },
    Path { n: usize },
    Cycle { n: usize },
    Star { n: usize },
    Tree { depth: usize },
    TwoTriangles,
    ErdosRenyi { n: usize, p: f64 },
}

impl GraphSource {
    pub fn build(&self, seed: u64) -> Result<drew::graph::Graph> {
        use drew::graph::gen;
        Ok(match self {
            GraphSource::File { path } => drew::graph::io::load_edge_list(path)
                .with_context(|| format!("loading {}", path.display()))?,
            GraphSource::Path { n } => gen::path(*n),
            GraphSource::Cycle { n } => gen::cycle(*n),
            GraphSource::Star { n } => gen::star(*n),
            GraphSource::Tree { depth } => gen::complete_binary_tree(*depth),
            GraphSource::TwoTriangles => gen::two_triangles(),
            GraphSource::ErdosRenyi { n, p } => gen::erdos_renyi_connectedish(*n, *p, seed),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_tree_depth")]
    pub depth: usize,
    #[serde(default = "default_r_lo")]
    pub r_lo: usize,
    #[serde(default = "default_tree_depth")]
    pub r_hi: usize,
}

fn default_family() -> String {
    "tree".into()
}

fn default_tree_depth() -> usize {
    6
}

fn default_r_lo() -> usize {
    2
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    /// Applies command-line overrides (`--seed`, `--out`, `--threads`).
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        out: Option<PathBuf>,
        threads: Option<usize>,
    ) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.out = out;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("an output directory is required (set `out` or pass --out)")
    }

    /// Writes the fully resolved config echo next to the results.
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("resolved.toml");
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn parse_split(s: &str) -> Result<drew::ring::Split> {
    Ok(match s {
        "train" => drew::ring::Split::Train,
        "val" => drew::ring::Split::Val,
        "test" => drew::ring::Split::Test,
        other => bail!("unknown split {other:?}; expected train, val or test"),
    })
}
