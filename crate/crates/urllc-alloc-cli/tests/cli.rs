//! End-to-end tests of the binary: exit codes, artifact layout, CSV
//! schemas, manifest contents, byte-level reproducibility, and the promise
//! that no command writes to its input config file.

use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urllc-alloc"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process should exit, not be killed")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_str(&text)
        .unwrap_or_else(|e| panic!("invalid JSON in {}: {e}", path.display()))
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().skip(1).count()
}

/// Two-user symmetric setup that solves and trains in well under a second.
const SYM2: &str = "seed = 5\n\
    [scenario]\n\
    kind = \"symmetric\"\n\
    n_users = 2\n\
    [eval]\n\
    samples = 50000\n";

#[test]
fn no_subcommand_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn missing_config_file_exits_one_with_usage() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "evaluate",
        "--config",
        "/nonexistent/run.toml",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    let err = stderr_of(&out);
    assert!(err.contains("cannot read config"), "stderr: {err}");
    assert!(err.contains("Usage"), "stderr: {err}");
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nn_userz = 4\n");
    let out = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("cannot parse config"));
}

#[test]
fn zero_samples_override_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SYM2);
    let out = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--samples",
        "0",
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("--samples must be positive"));
}

#[test]
fn solve_symmetric_rejects_asymmetric_scenarios() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[scenario]\nkind = \"explicit\"\ndistances_m = [100.0, 200.0]\n",
    );
    let out = run(&[
        "solve-symmetric",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("asymmetric"));
}

#[test]
fn solve_symmetric_writes_artifacts_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SYM2);
    let cfg_bytes_before = fs::read(&cfg).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "solve-symmetric",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    }

    // The input config is never mutated.
    assert_eq!(fs::read(&cfg).unwrap(), cfg_bytes_before);

    // Trace schema and a non-empty trajectory.
    let trace = out_a.join("trace.csv");
    assert_eq!(first_line(&trace), "iter,w_hz,residual");
    assert!(data_rows(&trace) > 0);

    // Report schema and sane content.
    let report = read_json(&out_a.join("solve-symmetric.report.json"));
    assert_eq!(report["schema"], "solve-symmetric v1");
    assert_eq!(report["n_users"], 2);
    assert!(report["solution"]["w_per_user_hz"].as_f64().unwrap() > 0.0);
    assert_eq!(report["verification"]["qos_ok"], true);

    // Manifest records the command, seed, and outputs.
    let manifest = read_json(&out_a.join("solve-symmetric.manifest.json"));
    assert_eq!(manifest["schema"], "run-manifest v1");
    assert_eq!(manifest["command"], "solve-symmetric");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["eval"]["samples"], 50000);

    // Identical inputs give byte-identical results.
    assert_eq!(
        fs::read(out_a.join("trace.csv")).unwrap(),
        fs::read(out_b.join("trace.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out_a.join("solve-symmetric.report.json")).unwrap(),
        fs::read(out_b.join("solve-symmetric.report.json")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SYM2);
    let out = run(&[
        "solve-symmetric",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let manifest = read_json(&dir.path().join("solve-symmetric.manifest.json"));
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["seed"], 9);
}

#[test]
fn train_writes_checkpoint_then_resumes_from_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SYM2);
    let out_dir = dir.path().to_str().unwrap().to_string();

    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", &out_dir]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let history = dir.path().join("history.csv");
    assert_eq!(
        first_line(&history),
        "frame,updates,sum_w_hz,zeta,xi,lambda_hz_1,lambda_hz_2,w_hz_1,w_hz_2"
    );
    assert!(data_rows(&history) > 0);
    assert!(dir.path().join("checkpoint.mlp").exists());
    assert!(dir.path().join("checkpoint.mlp.meta.json").exists());

    let report = read_json(&dir.path().join("train.report.json"));
    assert_eq!(report["schema"], "train v1");
    assert_eq!(report["converged"], true);
    assert_eq!(report["resumed_from_checkpoint"], false);
    let cold_frames = report["frames_used"].as_u64().unwrap();
    assert!(cold_frames > 0);
    assert_eq!(report["w_hz"].as_array().unwrap().len(), 2);

    let manifest = read_json(&dir.path().join("train.manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);

    // A second run finds the checkpoint and needs far fewer frames.
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", &out_dir]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let report = read_json(&dir.path().join("train.report.json"));
    assert_eq!(report["resumed_from_checkpoint"], true);
    assert_eq!(report["converged"], true);
    let warm_frames = report["frames_used"].as_u64().unwrap();
    assert!(
        warm_frames * 2 <= cold_frames,
        "warm start used {warm_frames} frames vs {cold_frames} cold"
    );
}

#[test]
fn train_rejects_corrupt_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SYM2);
    fs::write(dir.path().join("checkpoint.mlp"), "not a checkpoint\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("cannot resume"));
}

#[test]
fn diverging_train_exits_two_and_keeps_history() {
    let dir = TempDir::new().unwrap();
    // A cap barely above the starting bandwidth turns the normal early
    // growth of the allocation into a divergence-guard trip a few frames
    // in, after the history log has accumulated rows.
    let cfg = write_config(
        dir.path(),
        "seed = 5\n\
         [scenario]\n\
         kind = \"symmetric\"\n\
         n_users = 2\n\
         [trainer]\n\
         sum_beta_cap_factor = 1.15\n",
    );
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("diverged"));

    // The streamed history and the manifest survive the failure; no
    // checkpoint or report is written for a diverged run.
    let history = dir.path().join("history.csv");
    assert!(history.exists());
    assert!(data_rows(&history) > 0);
    let manifest = read_json(&dir.path().join("train.manifest.json"));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 1);
    assert!(!dir.path().join("checkpoint.mlp").exists());
    assert!(!dir.path().join("train.report.json").exists());
}

#[test]
fn evaluate_equal_power_passes_qos() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 5\n\
         [scenario]\n\
         kind = \"symmetric\"\n\
         n_users = 2\n\
         [eval]\n\
         samples = 50000\n\
         policy = \"equal_power\"\n",
    );
    let out = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let report = read_json(&dir.path().join("evaluate.report.json"));
    assert_eq!(report["policy"], "equal");
    assert_eq!(report["qos_ok"], true);
    assert_eq!(report["n_samples"], 50000);
    assert_eq!(report["mean_stat"].as_array().unwrap().len(), 2);
}

#[test]
fn evaluate_learned_needs_a_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SYM2);
    let out = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("--checkpoint"));
}

#[test]
fn evaluate_uses_samples_flag_over_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 5\n\
         [scenario]\n\
         kind = \"symmetric\"\n\
         n_users = 2\n\
         [eval]\n\
         policy = \"optimal\"\n",
    );
    let out = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--samples",
        "40000",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let report = read_json(&dir.path().join("evaluate.report.json"));
    assert_eq!(report["n_samples"], 40000);
    let manifest = read_json(&dir.path().join("evaluate.manifest.json"));
    assert_eq!(manifest["config"]["eval"]["samples"], 40000);
}

#[test]
fn sweep_writes_policy_rows_and_comparison() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 5\n\
         [scenario]\n\
         kind = \"symmetric\"\n\
         n_users = 2\n\
         [eval]\n\
         samples = 50000\n\
         [sweep]\n\
         k_values = [2]\n",
    );
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let sweep = dir.path().join("sweep.csv");
    assert_eq!(
        first_line(&sweep),
        "n_users,policy,total_bandwidth_hz,xi,worst_rel_violation,qos_ok"
    );
    // Symmetric K=2 evaluates learned, optimal, and equal-power policies.
    assert_eq!(data_rows(&sweep), 3);

    let cmp = dir.path().join("sweep_comparison.csv");
    assert_eq!(
        first_line(&cmp),
        "n_users,learned_required_hz,equal_required_hz,diff_hz,se_hz,tolerance_hz,learned_no_worse"
    );
    assert_eq!(data_rows(&cmp), 1);

    let manifest = read_json(&dir.path().join("sweep.manifest.json"));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_rejects_explicit_scenarios() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[scenario]\nkind = \"explicit\"\ndistances_m = [100.0, 200.0]\n",
    );
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("symmetric or road"));
}

#[test]
fn convergence_study_requires_road_and_writes_summaries() {
    let dir = TempDir::new().unwrap();

    // Wrong scenario kind is a config error.
    let bad = write_config(dir.path(), "[scenario]\nkind = \"symmetric\"\n");
    let out = run(&[
        "convergence-study",
        "--config",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("road"));

    let cfg = write_config(
        dir.path(),
        "seed = 5\n\
         [scenario]\n\
         kind = \"road\"\n\
         [study]\n\
         n_trials = 2\n\
         n_users = 2\n",
    );
    let out = run(&[
        "convergence-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let records = dir.path().join("study.csv");
    assert_eq!(first_line(&records), "trial,pretrained,frames_to_converge,converged");
    // Each trial contributes one cold and one warm episode.
    assert_eq!(data_rows(&records), 4);

    let summary = dir.path().join("study_summary.csv");
    assert_eq!(
        first_line(&summary),
        "episode,n_trials,median_frames,p99_9_frames,p99_99_frames,n_unconverged"
    );
    assert_eq!(data_rows(&summary), 2);
}
