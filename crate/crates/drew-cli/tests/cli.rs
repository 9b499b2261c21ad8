//! End-to-end command-line behavior, run against the real binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn drew_bin() -> &'static str {
    env!("CARGO_BIN_EXE_drew")
}

fn run(args: &[&str]) -> Output {
    Command::new(drew_bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn schedule_dump_matches_golden_output() {
    let out = run(&["schedule-dump", "-L", "3", "--nu", "1"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "0 1 0\n1 1 1\n1 2 0\n2 1 2\n2 2 1\n2 3 0\n");

    let out = run(&["schedule-dump", "-L", "3", "--nu", "inf"]);
    assert!(stdout(&out).contains("2 3 2\n"));
}

#[test]
fn params_reports_matrix_count_and_total() {
    let out = run(&[
        "params", "--arch", "drew_gcn", "-L", "3", "--hidden", "4", "--k-cap", "3",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("weight_matrices=6"), "{text}");
    assert!(text.contains("total_params=169"), "{text}");
}

#[test]
fn precompute_writes_a_loadable_cache() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("graph.edges");
    write(&edges, "4 3\n0 1\n1 2\n2 3\n");
    let cache = dir.path().join("graph.hops");
    let out = run(&[
        "precompute",
        "--edges",
        edges.to_str().unwrap(),
        "--k-max",
        "3",
        "--out",
        cache.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let hi = drew::graph::io::load_hop_cache(&cache).unwrap();
    assert_eq!(hi.distance(0, 3), Some(3));
}

fn tiny_train_config(out_dir: &Path) -> String {
    format!(
        r#"
seed = 11
out = "{}"

[model]
arch = "drew_gcn"
layers = 2
hidden = 8
nu = 1

[dataset]
instances = 40
ring_len = 5
classes = 2

[train]
epochs = 2
batch = 16
"#,
        out_dir.display()
    )
}

fn read_result_without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("seconds");
    v
}

#[test]
fn train_writes_results_echo_and_checkpoint_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    let out_a = dir.path().join("a");
    write(&cfg_path, &tiny_train_config(&out_a));

    let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_a.join("result.json").exists());
    assert!(out_a.join("model.ckpt").exists());
    let echo = out_a.join("resolved.toml");
    assert!(echo.exists());

    // feeding the echo back reproduces the run bit-for-bit (timing aside)
    let out_b = dir.path().join("b");
    let rerun = run(&[
        "train",
        "--config",
        echo.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    assert_eq!(
        read_result_without_timing(&out_a.join("result.json")),
        read_result_without_timing(&out_b.join("result.json")),
    );
}

#[test]
fn eval_reproduces_the_reported_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    let out_dir = dir.path().join("run");
    write(&cfg_path, &tiny_train_config(&out_dir));
    let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let result = read_result_without_timing(&out_dir.join("result.json"));

    let eval_cfg = dir.path().join("eval.toml");
    write(
        &eval_cfg,
        &format!(
            r#"
seed = 11

[model]
arch = "drew_gcn"
layers = 2
hidden = 8
nu = 1

[dataset]
instances = 40
ring_len = 5
classes = 2

[eval]
checkpoint = "{}"
split = "test"
"#,
            out_dir.join("model.ckpt").display()
        ),
    );
    let out = run(&["eval", "--config", eval_cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let eval: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(eval["accuracy"], result["test_accuracy"]);
}

#[test]
fn sweep_writes_csv_with_frozen_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sweep.toml");
    let out_dir: PathBuf = dir.path().join("sweep");
    write(
        &cfg_path,
        &format!(
            r#"
seed = 3
out = "{}"

[sweep]
models = ["constant", "drew_gcn:nu=1"]
ring_lengths = [4]
repeats = 2
instances = 30
classes = 3
epochs = 1
batch = 16
"#,
            out_dir.display()
        ),
    );
    let out = run(&["ringtransfer-sweep", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# drew version="));
    assert_eq!(lines[1], "model,k,L,seed,val_acc,test_acc,params,seconds");
    assert_eq!(lines.len(), 2 + 4, "one row per model x k x repeat");
    assert!(stdout(&out).contains("mean_test_acc"));
}

#[test]
fn sensitivity_jacobian_and_decay_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sens.toml");
    let out_dir = dir.path().join("sens");
    write(
        &cfg_path,
        &format!(
            r#"
seed = 5
out = "{}"

[model]
arch = "drew_gcn"
layers = 3
hidden = 4
nu = 1
in_dim = 3
out_dim = 3

[sensitivity]
mode = "jacobian"
graph = {{ kind = "cycle", n = 6 }}
"#,
            out_dir.display()
        ),
    );
    let out = run(&["sensitivity", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sensitivity.json")).unwrap())
            .unwrap();
    assert_eq!(report["graph_nodes"], 6);
    assert_eq!(report["s"].as_array().unwrap().len(), 6);

    let decay_cfg = dir.path().join("decay.toml");
    let decay_out = dir.path().join("decay");
    write(
        &decay_cfg,
        &format!(
            r#"
seed = 5
out = "{}"

[sensitivity]
mode = "decay"

[sensitivity.decay]
family = "tree"
depth = 4
r_lo = 2
r_hi = 4
"#,
            decay_out.display()
        ),
    );
    let out = run(&["sensitivity", "--config", decay_cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(decay_out.join("sensitivity.json")).unwrap())
            .unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert_eq!(report["drew_floor_holds"], true);
}

#[test]
fn unknown_config_keys_fail_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("typo.toml");
    write(
        &cfg_path,
        r#"
seed = 1
out = "unused"

[model]
arch = "gcn"
layers = 2
hidden = 4
laers = 3
"#,
    );
    let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("laers"), "{}", stderr(&out));
}

#[test]
fn divergent_runs_exit_nonzero_with_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("diverge.toml");
    let out_dir = dir.path().join("run");
    write(
        &cfg_path,
        &format!(
            r#"
seed = 2
out = "{}"

[model]
arch = "drew_gcn"
layers = 2
hidden = 8
nu = 1

[dataset]
instances = 40
ring_len = 5
classes = 2

[train]
epochs = 4
lr = 1e18
"#,
            out_dir.display()
        ),
    );
    let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
    if !out.status.success() {
        assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
        let result: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out_dir.join("result.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(result["diverged"], true);
    }
}
