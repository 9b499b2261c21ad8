//! Experiment command line: train and evaluate ring-transfer models, sweep
//! architectures over ring lengths, run sensitivity analyses, and inspect
//! schedules and parameter counts.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{parse_split, RunConfig, SensitivityMode};
use drew::models::{param_breakdown, Arch, ModelParams};
use drew::ring::{
    self, append_sweep_csv, gen_ring_transfer, SweepModel, SweepSettings, TrainHyper,
};
use drew::schedule::{build_schedule, DelayPolicy};
use drew::sensitivity::{decay_comparison, jacobian_norms, ProbeFamily};
use drew::tensor::checkpoint;
use drew::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "drew", version, about = "Dynamically rewired message passing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a hop-index cache from an edge-list file.
    Precompute {
        /// Edge-list file (`n m` header, then `u v` lines).
        #[arg(long)]
        edges: PathBuf,
        /// Maximum hop distance to index.
        #[arg(long)]
        k_max: usize,
        /// Cache file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the ring-transfer benchmark.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(RunArgs),
    /// Sweep models over ring lengths and write the accuracy CSV.
    RingtransferSweep(RunArgs),
    /// Jacobian sensitivity report or the linearized decay probe.
    Sensitivity(RunArgs),
    /// Print the layer/hop/source schedule as text.
    ScheduleDump {
        /// Number of layers.
        #[arg(short = 'L', long)]
        layers: usize,
        /// Delay parameter: a positive integer or `inf`.
        #[arg(long)]
        nu: String,
        /// Hop cap (defaults to the layer count).
        #[arg(long)]
        k_cap: Option<usize>,
    },
    /// Parameter count and weight-matrix breakdown for a model shape.
    Params {
        #[arg(long)]
        arch: ArchArg,
        #[arg(short = 'L', long)]
        layers: usize,
        #[arg(long)]
        hidden: usize,
        /// Hop cap (defaults to the layer count).
        #[arg(long)]
        k_cap: Option<usize>,
        #[arg(long, default_value_t = 5)]
        in_dim: usize,
        #[arg(long, default_value_t = 5)]
        out_dim: usize,
        /// Leave the per-layer batch norm out of the count.
        #[arg(long)]
        no_batch_norm: bool,
        /// Share hop weights within a layer.
        #[arg(long)]
        weight_sharing: bool,
    },
}

/// clap-parseable arch wrapper.
#[derive(Clone, Copy)]
struct ArchArg(Arch);

impl std::str::FromStr for ArchArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(ArchArg)
    }
}

fn parse_nu(s: &str) -> Result<DelayPolicy> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        return Ok(DelayPolicy::Infinite);
    }
    let v: u32 = s
        .parse()
        .with_context(|| format!("nu must be a positive integer or `inf`, got {s:?}"))?;
    if v == 0 {
        bail!("nu must be at least 1");
    }
    Ok(DelayPolicy::Finite(v))
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // pool may exist already; overriding twice is not an error we care about
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_run_config(args: &RunArgs) -> Result<RunConfig> {
    Ok(RunConfig::load(&args.config)?.with_overrides(args.seed, args.out.clone(), args.threads))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Precompute { edges, k_max, out } => precompute(&edges, k_max, &out),
        Command::Train(args) => train_cmd(&args),
        Command::Eval(args) => eval_cmd(&args),
        Command::RingtransferSweep(args) => sweep_cmd(&args),
        Command::Sensitivity(args) => sensitivity_cmd(&args),
        Command::ScheduleDump { layers, nu, k_cap } => {
            let policy = parse_nu(&nu)?;
            let schedule = build_schedule(layers, policy, k_cap.unwrap_or(layers));
            print!("{}", schedule.dump());
            Ok(())
        }
        Command::Params {
            arch,
            layers,
            hidden,
            k_cap,
            in_dim,
            out_dim,
            no_batch_norm,
            weight_sharing,
        } => {
            let mut cfg = drew::models::ModelConfig::new(arch.0, layers, hidden, in_dim, out_dim);
            cfg.use_batch_norm = !no_batch_norm;
            if weight_sharing {
                cfg.weight_sharing = true;
            }
            let k_cap = k_cap.unwrap_or(layers);
            cfg.k_cap = Some(k_cap);
            let cfg = cfg.validated()?;
            let b = param_breakdown(&cfg, k_cap);
            println!(
                "arch={} layers={layers} hidden={hidden} k_cap={k_cap}",
                cfg.arch
            );
            println!("weight_matrices={}", b.weight_matrices);
            println!("total_params={}", b.total);
            Ok(())
        }
    }
}

fn precompute(edges: &std::path::Path, k_max: usize, out: &std::path::Path) -> Result<()> {
    let g = drew::graph::io::load_edge_list(edges)
        .with_context(|| format!("loading {}", edges.display()))?;
    let hi = drew::graph::compute_hop_index(&g, k_max);
    drew::graph::io::save_hop_cache(&hi, out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "indexed {} nodes to k_max={} (effective diameter {})",
        g.node_count(),
        k_max,
        drew::graph::eccentricity_cap(&hi)
    );
    Ok(())
}

fn train_cmd(args: &RunArgs) -> Result<()> {
    let mut cfg = load_run_config(args)?;
    init_threads(cfg.threads);
    let seed = cfg.seed();
    cfg.seed = Some(seed);
    let out_dir = cfg.out_dir()?.to_path_buf();

    let dataset = cfg
        .dataset
        .clone()
        .context("train needs a [dataset] section")?;
    let train = cfg.train.clone().unwrap_or_default();
    let mut model = cfg.model.clone().context("train needs a [model] section")?;

    let ds = gen_ring_transfer(
        dataset.instances,
        dataset.ring_len,
        dataset.classes,
        derive_seed(seed, "data"),
    )?;

    if train.budget_match {
        let sweep_model = SweepModel::Model {
            arch: model.arch,
            nu: model.nu,
        };
        let solved = ring::budget_matched_config(&sweep_model, dataset.ring_len, dataset.classes)?;
        model.hidden = Some(solved.hidden);
        model.k_cap = solved.k_cap;
    }
    cfg.model = Some(model.clone());
    let model_cfg = model.to_model_config(Some(dataset.classes))?;

    let hyper = TrainHyper {
        lr: train.lr,
        epochs: train.epochs,
        batch: train.batch,
        seed: derive_seed(seed, "train"),
        stop_when_val_perfect: train.stop_when_val_perfect,
    };

    std::fs::create_dir_all(&out_dir)?;
    cfg.write_echo(&out_dir)?;
    if train.dump_dataset {
        ds.dump(&out_dir.join("dataset"))?;
    }

    let (result, best_params) = ring::train(&model_cfg, &ds, &hyper, train.readout)?;
    std::fs::write(
        out_dir.join("result.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    checkpoint::save_checkpoint(&out_dir.join("model.ckpt"), &best_params.to_checkpoint())?;

    if result.diverged {
        bail!(
            "run diverged (non-finite or exploding loss); marker written to {}",
            out_dir.join("result.json").display()
        );
    }
    println!(
        "val_acc={:.4} test_acc={:.4} params={} epochs_run={}",
        result.val_accuracy,
        result.test_accuracy,
        result.param_count,
        result.train_losses.len()
    );
    Ok(())
}

fn eval_cmd(args: &RunArgs) -> Result<()> {
    let mut cfg = load_run_config(args)?;
    init_threads(cfg.threads);
    let seed = cfg.seed();
    cfg.seed = Some(seed);

    let dataset = cfg
        .dataset
        .clone()
        .context("eval needs a [dataset] section")?;
    let model = cfg.model.clone().context("eval needs a [model] section")?;
    let eval = cfg.eval.clone().context("eval needs an [eval] section")?;
    let split = parse_split(&eval.split)?;

    let ds = gen_ring_transfer(
        dataset.instances,
        dataset.ring_len,
        dataset.classes,
        derive_seed(seed, "data"),
    )?;
    let model_cfg = model.to_model_config(Some(dataset.classes))?;

    let entries = checkpoint::load_checkpoint(&eval.checkpoint)
        .with_context(|| format!("loading {}", eval.checkpoint.display()))?;
    let k_cap = match model_cfg.arch {
        Arch::Gcn => 1,
        _ => model_cfg.k_cap.unwrap_or((dataset.ring_len / 2).max(1)),
    };
    let params = ModelParams::from_checkpoint(&model_cfg, k_cap, &entries)?;

    let mut ctxs = ring::RingContexts::new(&model_cfg, &ds)?;
    let accuracy = ring::evaluate(&params, &mut ctxs, &ds, split, eval.batch, eval.readout)?;
    let report = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "split": eval.split,
        "accuracy": accuracy,
        "checkpoint": eval.checkpoint,
        "instances": ds.split_indices(split).len(),
    });
    if let Ok(dir) = cfg.out_dir() {
        std::fs::create_dir_all(dir)?;
        cfg.write_echo(dir)?;
        std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    }
    println!("{report}");
    Ok(())
}

fn sweep_cmd(args: &RunArgs) -> Result<()> {
    let mut cfg = load_run_config(args)?;
    init_threads(cfg.threads);
    let seed = cfg.seed();
    cfg.seed = Some(seed);
    let out_dir = cfg.out_dir()?.to_path_buf();
    let section = cfg.sweep.clone().unwrap_or_default();
    cfg.sweep = Some(section.clone());

    let models: Vec<SweepModel> = section
        .models
        .iter()
        .map(|s| SweepModel::parse(s).map_err(|e| anyhow::anyhow!("{e}")))
        .collect::<Result<_>>()?;
    let settings = SweepSettings {
        models,
        ring_lengths: section.ring_lengths.clone(),
        repeats: section.repeats,
        instances: section.instances,
        classes: section.classes,
        base_seed: seed,
        readout: section.readout,
        epochs: section.epochs,
        lr: section.lr,
        batch: section.batch,
        stop_when_val_perfect: section.stop_when_val_perfect,
    };

    std::fs::create_dir_all(&out_dir)?;
    cfg.write_echo(&out_dir)?;
    let table = ring::sweep(&settings)?;
    append_sweep_csv(&out_dir.join("sweep.csv"), &table)?;

    println!("model,k,L,mean_test_acc,std_test_acc,repeats,failed");
    for row in table.summarize() {
        println!(
            "{},{},{},{:.4},{:.4},{},{}",
            row.model,
            row.ring_len,
            row.layers,
            row.mean_test_acc,
            row.std_test_acc,
            row.repeats,
            row.failed
        );
    }
    Ok(())
}

fn sensitivity_cmd(args: &RunArgs) -> Result<()> {
    let mut cfg = load_run_config(args)?;
    init_threads(cfg.threads);
    let seed = cfg.seed();
    cfg.seed = Some(seed);
    let out_dir = cfg.out_dir()?.to_path_buf();
    let section = cfg
        .sensitivity
        .clone()
        .context("sensitivity needs a [sensitivity] section")?;

    std::fs::create_dir_all(&out_dir)?;
    let report_json = match section.mode {
        SensitivityMode::Jacobian => {
            let model = cfg
                .model
                .clone()
                .context("jacobian mode needs a [model] section")?;
            let source = section
                .graph
                .clone()
                .context("jacobian mode needs a [sensitivity.graph] table")?;
            let g = source.build(derive_seed(seed, "graph"))?;
            let model_cfg = model.to_model_config(None)?;
            let hi = drew::graph::compute_hop_index(&g, g.node_count().max(2));
            let k_cap = match model_cfg.arch {
                Arch::Gcn => 1,
                _ => model_cfg
                    .k_cap
                    .unwrap_or_else(|| drew::graph::eccentricity_cap(&hi).max(1)),
            };
            let params = ModelParams::init(
                &model_cfg,
                k_cap,
                &mut ChaCha12Rng::seed_from_u64(derive_seed(seed, "init")),
            )?;
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "features"));
            let n = g.node_count();
            let data: Vec<f64> = (0..n * model_cfg.in_dim)
                .map(|_| rng.gen_range(0.1..1.0))
                .collect();
            let x =
                drew::tensor::Tensor::new(drew::tensor::Shape::matrix(n, model_cfg.in_dim), data)?;
            let upto = section.upto_layer.unwrap_or(model_cfg.layers);
            let report = jacobian_norms(&params, &g, &hi, &x, upto, seed)?;
            serde_json::to_value(&report)?
        }
        SensitivityMode::Decay => {
            let decay = section.decay.clone().unwrap_or(config::DecaySection {
                family: "tree".into(),
                depth: 6,
                r_lo: 2,
                r_hi: 6,
            });
            let family = match decay.family.as_str() {
                "tree" => ProbeFamily::CompleteBinaryTree { depth: decay.depth },
                "cycle" => ProbeFamily::Cycle,
                other => bail!("unknown decay family {other:?}; expected tree or cycle"),
            };
            let out = decay_comparison(family, decay.r_lo, decay.r_hi)?;
            serde_json::to_value(&out)?
        }
    };

    cfg.write_echo(&out_dir)?;
    let mut with_seed = report_json;
    with_seed["seed"] = serde_json::json!(seed);
    std::fs::write(
        out_dir.join("sensitivity.json"),
        serde_json::to_string_pretty(&with_seed)?,
    )?;
    println!("wrote {}", out_dir.join("sensitivity.json").display());
    Ok(())
}
