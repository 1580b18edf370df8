//! End-to-end command tests: generate/run/replay/report/sweep, artifact
//! layout, and binary exit codes.

use eqsearch_cli::{cmd_generate, cmd_run, cmd_sweep, report, CliError};
use eqsearch_core::llmio::{ReplayScript, Role};
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;

const GEN_SPEC: &str = r#"
benchmark = "oscillator1"
seed = 17
n_train = 120
n_id = 40
n_ood = 40
"#;

fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// Dataset + config + script for a small replay run; returns the config path.
fn replay_fixture(dir: &Path, engine_overrides: &str, batches: &[Vec<&str>]) -> PathBuf {
    let spec = write(&dir.join("gen.toml"), GEN_SPEC);
    cmd_generate(&spec, dir).unwrap();

    let mut script = ReplayScript::new();
    script.push(Role::Data, vec!["initial analysis".into()]);
    for batch in batches {
        script.push(Role::Main, batch.iter().map(|s| s.to_string()).collect());
    }
    let total = batches.iter().map(|b| b.len()).sum::<usize>();
    for i in 0..total {
        script.push(Role::Idea, vec![format!("idea {i}")]);
    }
    for i in 0..total {
        script.push(Role::Data, vec![format!("refined {i}")]);
    }
    script.save(&dir.join("script.json")).unwrap();

    let b = batches.first().map(|x| x.len()).unwrap_or(4);
    let config = format!(
        r#"
[dataset]
csv = "{dir}/oscillator1.csv"
meta = "{dir}/oscillator1.meta.json"

[engine]
iterations = {iters}
samples_per_iteration = {b}
seed = 5
{engine_overrides}

[fit]
restarts = 3
max_iters_per_restart = 60

[backend]
mode = "replay"
script = "{dir}/script.json"
"#,
        dir = dir.display(),
        iters = batches.len(),
    );
    write(&dir.join("run.toml"), &config)
}

fn gt_batches(n: usize) -> Vec<Vec<&'static str>> {
    let mut batches = vec![vec![
        "params[0]*sin(x) - params[1]*v^3 - params[2]*x^3 - params[3]*x*v - x*cos(x)",
        "junk",
        "params[0]*x",
        "params[0]",
    ]];
    for _ in 1..n {
        batches.push(vec!["params[0]*x", "junk", ")(", "params[0]*v"]);
    }
    batches
}

#[test]
fn generate_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir.path().join("gen.toml"), GEN_SPEC);
    let first = cmd_generate(&spec, dir.path()).unwrap();
    assert_eq!(first.rows, 200);
    assert!(first.csv.exists() && first.meta.exists());
    let second = cmd_generate(&spec, dir.path()).unwrap();
    assert_eq!(first.csv_sha256, second.csv_sha256);
}

#[test]
fn generate_rejects_bad_spec() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir.path().join("gen.toml"), "benchmark = \"oscillator1\"\nseed = 1\nn_train = 0\n");
    let err = cmd_generate(&spec, dir.path()).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn replay_run_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let config = replay_fixture(dir.path(), "", &gt_batches(2));
    let out = dir.path().join("out");
    let summary = cmd_run(&config, Some(&out), None).unwrap();

    for file in ["history.jsonl", "prompts.jsonl", "insights.jsonl", "ideas.json", "manifest.json"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let m = &summary.manifest;
    assert_eq!(m.backend_id, "replay");
    assert_eq!(m.candidates, 8);
    assert_eq!(m.iterations_completed, 2);
    assert!(m.aborted.is_none());
    assert!(m.ablation.is_none());

    // the ground-truth candidate drives ID NMSE to numerically zero
    let id = m.final_metrics.iter().find(|s| s.split == "id_test").unwrap();
    assert!(id.nmse.unwrap() < 1e-10, "id nmse {:?}", id.nmse);
    let ood = m.final_metrics.iter().find(|s| s.split == "ood_test").unwrap();
    assert!(ood.nmse.unwrap() < 1e-10);

    // fingerprint is recomputable from the dataset files
    let recomputed = eqsearch_cli::dataset_fingerprint(
        &dir.path().join("oscillator1.csv"),
        &dir.path().join("oscillator1.meta.json"),
    )
    .unwrap();
    assert_eq!(m.dataset_fingerprint, recomputed);
}

#[test]
fn reduced_loop_is_flagged_in_the_manifest() {
    let dir = TempDir::new().unwrap();
    let overrides = "insight_probability = 0.0\n\n[engine.idea_toggles]\nuse_positive = false\nuse_negative = false\nuse_invalid = false\n";
    let config = replay_fixture(dir.path(), overrides, &gt_batches(1));
    let out = dir.path().join("out");
    let summary = cmd_run(&config, Some(&out), None).unwrap();
    assert_eq!(summary.manifest.ablation.as_deref(), Some("reduced-loop"));
}

#[test]
fn missing_dataset_fails_before_backend_setup() {
    let dir = TempDir::new().unwrap();
    // neither dataset nor script exist; the dataset error must win
    let config = write(
        &dir.path().join("run.toml"),
        r#"
[dataset]
csv = "missing.csv"
meta = "missing.meta.json"

[backend]
mode = "replay"
script = "also-missing.json"
"#,
    );
    let err = cmd_run(&config, None, None).unwrap_err();
    assert!(matches!(err, CliError::Dataset(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn report_reproduces_identical_tables() {
    let dir = TempDir::new().unwrap();
    let config = replay_fixture(dir.path(), "", &gt_batches(3));
    let out = dir.path().join("out");
    cmd_run(&config, Some(&out), None).unwrap();

    let history = out.join("history.jsonl");
    let paths = report::cmd_report(&history, None).unwrap();
    let convergence = std::fs::read_to_string(&paths.convergence).unwrap();
    assert_eq!(convergence.lines().count(), 4, "header + 3 iterations");

    let again = report::cmd_report(&history, Some(&dir.path().join("r2"))).unwrap();
    assert_eq!(convergence, std::fs::read_to_string(&again.convergence).unwrap());
    let categories = std::fs::read_to_string(&paths.categories).unwrap();
    let total: usize = categories
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 12);
}

#[test]
fn report_rejects_malformed_lines_with_line_number() {
    let dir = TempDir::new().unwrap();
    let history = write(&dir.path().join("history.jsonl"), "{\"seq\":0 not json\n");
    let err = report::cmd_report(&history, None).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}

#[test]
fn report_of_empty_history_is_headers_only() {
    let dir = TempDir::new().unwrap();
    let history = write(&dir.path().join("history.jsonl"), "");
    let paths = report::cmd_report(&history, None).unwrap();
    assert_eq!(
        std::fs::read_to_string(&paths.convergence).unwrap(),
        "iteration,best_score,best_nmse_train\n"
    );
}

#[test]
fn sweep_runs_each_cell() {
    let dir = TempDir::new().unwrap();
    let config_path = replay_fixture(dir.path(), "", &gt_batches(1));
    // append a sweep table to the run config
    let mut text = std::fs::read_to_string(&config_path).unwrap();
    text.push_str(
        r#"
[sweep]
insight_probabilities = [0.0, 1.0]

[[sweep.idea_variants]]
name = "full"
use_positive = true
use_negative = true
use_invalid = true

[[sweep.idea_variants]]
name = "none"
"#,
    );
    std::fs::write(&config_path, text).unwrap();

    let sweep_dir = dir.path().join("sweep");
    let cells = cmd_sweep(&config_path, &sweep_dir).unwrap();
    assert_eq!(cells.len(), 4);
    for cell in &cells {
        assert!(cell.error.is_none(), "{:?}", cell.error);
        assert!(Path::new(&cell.directory).join("manifest.json").exists());
    }
    assert!(sweep_dir.join("sweep_summary.csv").exists());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_eqsearch");
    let dir = TempDir::new().unwrap();

    // 2: config error
    let bad_spec = write(&dir.path().join("bad.toml"), "benchmark = \"nope\"\n");
    let status = Command::new(bin)
        .args(["generate", bad_spec.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // 4: dataset error
    let config = write(
        &dir.path().join("run.toml"),
        "[dataset]\ncsv = \"x.csv\"\nmeta = \"x.meta.json\"\n\n[backend]\nmode = \"replay\"\nscript = \"s.json\"\n",
    );
    let status = Command::new(bin)
        .args(["run", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));

    // 3: backend error (dataset present, script missing)
    let spec = write(&dir.path().join("gen.toml"), GEN_SPEC);
    cmd_generate(&spec, dir.path()).unwrap();
    let config = write(
        &dir.path().join("run2.toml"),
        &format!(
            "[dataset]\ncsv = \"{d}/oscillator1.csv\"\nmeta = \"{d}/oscillator1.meta.json\"\n\n[backend]\nmode = \"replay\"\nscript = \"{d}/missing.json\"\n",
            d = dir.path().display()
        ),
    );
    let status = Command::new(bin)
        .args(["run", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));

    // 0: a working replay run through the binary
    let config = replay_fixture(dir.path(), "", &gt_batches(1));
    let status = Command::new(bin)
        .args(["run", config.to_str().unwrap(), "--out"])
        .arg(dir.path().join("binout"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
}
