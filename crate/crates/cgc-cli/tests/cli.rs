//! Integration tests for the `cgc` binary: exit codes, idempotent stage
//! stamps, staleness detection, tag derivation, and a miniature pipeline
//! that finishes in seconds.

use std::path::{Path, PathBuf};
use std::process::Output;

/// A pipeline configuration small enough to run every stage in seconds.
const TINY_CONFIG: &str = r#"
config_version = 1
preset = "custom"

[paths]
corpus = "work/corpus.txt"
workdir = "work"

[corpus]
bytes = 40000
seed = 1234

[model]
n_layers = 2
n_heads = 2
d_head = 8
d_ffn = 64
context_len = 64

[train]
steps = 60
warmup_steps = 10

[eval]
n_chunks = 4
chunk_len = 64

[calibration]
n_seq = 8
seq_len = 32

[sae]
n_features = 16
k = 4
epochs = 2

[density]
n_pairs = 64

[evo]
population = 4
generations = 3
fitness_sample = 2
elite = 1

[theorem1]
d = 8
n_features = 8
zipf_exponents = [0.0, 4.0, 8.0]
s_grid = [0.0, 0.5, 1.0]
trials = 80

[theorem2]
d = 8
n_features = 8
zipf_exponents = [0.0, 1.0, 2.0]
trials = 80
"#;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn cgc(config: Option<&Path>, args: &[&str]) -> Output {
    let exe = env!("CARGO_BIN_EXE_cgc");
    let mut cmd = std::process::Command::new(exe);
    if let Some(cfg) = config {
        cmd.arg("--config").arg(cfg);
    }
    cmd.args(args).output().expect("spawn cgc")
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = cgc(Some(config), args);
    assert!(
        out.status.success(),
        "cgc {args:?} exited {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(config: Option<&Path>, args: &[&str], code: i32) -> String {
    let out = cgc(config, args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "cgc {args:?}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn corpus_generation_is_deterministic_and_idempotent() {
    let dir_a = tempfile::tempdir().unwrap();
    let cfg_a = write_config(dir_a.path());
    ok(&cfg_a, &["gen-corpus"]);
    let corpus_a = std::fs::read(dir_a.path().join("work/corpus.txt")).unwrap();
    assert!(corpus_a.len() >= 40_000);

    // A second invocation is a stamped no-op; --force rebuilds the same bytes.
    let rerun = ok(&cfg_a, &["gen-corpus"]);
    assert!(rerun.contains("up to date"), "stdout: {rerun}");
    let forced = ok(&cfg_a, &["--force", "gen-corpus"]);
    assert!(!forced.contains("up to date"), "stdout: {forced}");
    assert_eq!(
        corpus_a,
        std::fs::read(dir_a.path().join("work/corpus.txt")).unwrap()
    );

    // The same seed in a different directory gives identical bytes; a
    // different seed does not.
    let dir_b = tempfile::tempdir().unwrap();
    let cfg_b = write_config(dir_b.path());
    ok(&cfg_b, &["gen-corpus"]);
    assert_eq!(
        corpus_a,
        std::fs::read(dir_b.path().join("work/corpus.txt")).unwrap()
    );
    ok(&cfg_b, &["--force", "gen-corpus", "--seed", "99"]);
    assert_ne!(
        corpus_a,
        std::fs::read(dir_b.path().join("work/corpus.txt")).unwrap()
    );
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());

    // No config at all.
    let err = fails_with(None, &["gen-corpus"], 1);
    assert!(err.contains("config"), "stderr: {err}");
    // Config path that does not exist.
    fails_with(Some(&dir.path().join("nope.toml")), &["gen-corpus"], 1);
    // Unknown allocation method is a parse error.
    fails_with(Some(&cfg), &["allocate", "--method", "bogus"], 1);
    // Unknown keys and bad versions are rejected, not ignored.
    let bad_key = dir.path().join("bad-key.toml");
    std::fs::write(&bad_key, "config_version = 1\n[corpus]\nbananas = 3\n").unwrap();
    fails_with(Some(&bad_key), &["gen-corpus"], 1);
    let bad_version = dir.path().join("bad-version.toml");
    std::fs::write(&bad_version, "config_version = 99\n").unwrap();
    let err = fails_with(Some(&bad_version), &["gen-corpus"], 1);
    assert!(err.contains("config_version"), "stderr: {err}");
    // Help is not an error.
    let out = cgc(None, &["--help"]);
    assert!(out.status.success());
}

#[test]
fn missing_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());

    // Training needs the corpus; the message names the producing command.
    let err = fails_with(Some(&cfg), &["train-lm"], 2);
    assert!(err.contains("gen-corpus"), "stderr: {err}");
    // Density needs activations and autoencoders.
    ok(&cfg, &["gen-corpus"]);
    let err = fails_with(Some(&cfg), &["density"], 2);
    assert!(err.contains("dump-acts"), "stderr: {err}");
    // Pruning needs an allocation.
    let err = fails_with(Some(&cfg), &["prune", "--method", "uniform"], 2);
    assert!(err.contains("allocate"), "stderr: {err}");
}

#[test]
fn stale_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&cfg, &["gen-corpus"]);
    ok(&cfg, &["train-lm"]);
    // Regenerate the corpus under a different seed: the checkpoint no
    // longer matches it, and downstream stages must refuse to mix them.
    ok(&cfg, &["--force", "gen-corpus", "--seed", "77"]);
    let err = fails_with(Some(&cfg), &["dump-acts"], 2);
    assert!(err.contains("stale"), "stderr: {err}");
}

#[test]
fn eval_tags_derive_from_checkpoint_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&cfg, &["gen-corpus"]);
    ok(&cfg, &["train-lm"]);

    // Default target is the dense model.
    ok(&cfg, &["eval-ppl"]);
    assert!(dir.path().join("work/eval.dense.json").exists());

    // model.<tag>.cgc1 carries its tag; other names need --tag.
    let model = dir.path().join("work/model.cgc1");
    let copy = dir.path().join("work/model.smoke.cgc1");
    std::fs::copy(&model, &copy).unwrap();
    ok(&cfg, &["eval-ppl", "--checkpoint", copy.to_str().unwrap()]);
    assert!(dir.path().join("work/eval.smoke.json").exists());
    let odd = dir.path().join("work/other-name.cgc1");
    std::fs::copy(&model, &odd).unwrap();
    let err = fails_with(
        Some(&cfg),
        &["eval-ppl", "--checkpoint", odd.to_str().unwrap()],
        1,
    );
    assert!(err.contains("--tag"), "stderr: {err}");
    ok(
        &cfg,
        &[
            "eval-ppl",
            "--checkpoint",
            odd.to_str().unwrap(),
            "--tag",
            "odd",
        ],
    );
    assert!(dir.path().join("work/eval.odd.json").exists());
}

#[test]
fn tiny_pipeline_runs_to_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let work = dir.path().join("work");

    ok(&cfg, &["gen-corpus"]);
    ok(&cfg, &["train-lm"]);
    ok(&cfg, &["dump-acts"]);
    ok(&cfg, &["train-saes"]);
    ok(&cfg, &["density"]);
    ok(&cfg, &["wanda"]);
    ok(&cfg, &["ablate-scan"]);
    ok(&cfg, &["correlate"]);

    // Stages are stamped: an unchanged stage is not recomputed.
    let rerun = ok(&cfg, &["density"]);
    assert!(rerun.contains("up to date"), "stdout: {rerun}");

    // The report requires the uniform baseline before any other method.
    ok(&cfg, &["allocate", "--method", "cgc-l"]);
    ok(&cfg, &["prune", "--method", "cgc-l"]);
    let err = fails_with(Some(&cfg), &["report"], 2);
    assert!(err.contains("uniform"), "stderr: {err}");
    ok(&cfg, &["allocate", "--method", "uniform"]);
    ok(&cfg, &["prune", "--method", "uniform"]);
    ok(&cfg, &["report"]);

    // Four heads, all represented in the artifacts.
    let density: cgc::density::DensityMap =
        serde_json::from_slice(&std::fs::read(work.join("density.json")).unwrap()).unwrap();
    assert_eq!(density.records.len(), 4);
    let correlate: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.join("correlate.json")).unwrap()).unwrap();
    assert!(correlate["density_vs_wanda_spearman"]["coefficient"]
        .as_f64()
        .unwrap()
        .is_finite());
    // The ablation scan ran, so its correlations are present too.
    assert!(correlate["density_vs_ablation_pearson"]["coefficient"]
        .as_f64()
        .unwrap()
        .is_finite());

    let report = std::fs::read_to_string(work.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("method,ppl,dppl_vs_dense,dppl_vs_uniform")
    );
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, vec!["dense", "uniform", "cgc-l"]);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["config_fingerprint"].is_string());
    assert!(manifest["seeds"]["train_batches"].is_u64());
    assert!(manifest["artifacts"]["report.csv"].is_string());

    // Retention overrides land in the allocation document.
    ok(&cfg, &["allocate", "--method", "uniform", "--rho", "0.75"]);
    let alloc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.join("alloc.uniform.json")).unwrap()).unwrap();
    assert_eq!(alloc["allocation"]["rho"].as_f64(), Some(0.75));
}

#[test]
fn simulate_theorems_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&cfg, &["simulate-theorems"]);
    let work = dir.path().join("work");

    let t1: cgc::redsim::Theorem1Report =
        serde_json::from_slice(&std::fs::read(work.join("theorem1.json")).unwrap()).unwrap();
    assert_eq!(t1.levels.len(), 3);
    assert!(t1.spearman.is_some());

    let t2: cgc::redsim::Theorem2Report =
        serde_json::from_slice(&std::fs::read(work.join("theorem2.json")).unwrap()).unwrap();
    assert_eq!(t2.components.len(), 3);
    assert!(t2.combined_stderr.is_finite());

    for csv in ["theorem1.csv", "theorem2.csv"] {
        let text = std::fs::read_to_string(work.join(csv)).unwrap();
        assert!(text.lines().count() > 1, "{csv} should hold data rows");
    }
}
