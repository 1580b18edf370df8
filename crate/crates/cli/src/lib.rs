//! Command implementations behind the `eqsearch` binary.
//!
//! Each command is an ordinary function so integration tests can drive them
//! without spawning processes. Errors carry the exit-code category:
//! 2 config, 3 backend, 4 dataset, 1 anything else.

pub mod report;

use chrono::{SecondsFormat, Utc};
use eqsearch_core::config::{BackendConfig, RunConfig};
use eqsearch_core::data::{generate, Dataset, GeneratorSpec, Split};
use eqsearch_core::engine::{self, Candidate};
use eqsearch_core::expr::evaluate;
use eqsearch_core::ideas::IdeaLibrary;
use eqsearch_core::llmio::{
    ChatBackend, HttpBackend, HttpConfig, ReplayBackend, SamplingOverrideBackend, ENV_API_BASE,
    ENV_API_KEY, ENV_MODEL,
};
use eqsearch_core::metrics::{acc_tau, nmse};
use eqsearch_core::templates::PromptTemplates;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Dataset(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<eqsearch_core::config::ConfigError> for CliError {
    fn from(e: eqsearch_core::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<eqsearch_core::data::DataError> for CliError {
    fn from(e: eqsearch_core::data::DataError) -> Self {
        CliError::Dataset(e.to_string())
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Other(format!("{context}: {e}"))
}

// ── generate ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub rows: usize,
    pub csv_sha256: String,
}

/// Generate a benchmark dataset from a TOML spec and write the CSV plus its
/// metadata sidecar. Idempotent for a fixed spec.
pub fn cmd_generate(spec_path: &Path, out_dir: &Path) -> Result<GenerateReport, CliError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", spec_path.display())))?;
    let spec: GeneratorSpec =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", spec_path.display())))?;
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let data = generate(&spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err("creating output directory", e))?;
    let csv = out_dir.join(format!("{}.csv", data.name()));
    let meta = out_dir.join(format!("{}.meta.json", data.name()));
    data.save(&csv, &meta)?;
    Ok(GenerateReport {
        rows: data.n_rows(),
        csv_sha256: sha256_file(&csv)?,
        csv,
        meta,
    })
}

// ── run ────────────────────────────────────────────────────────────

/// Per-split metrics of the final best equation. `nmse`/`acc_tau` are taken
/// from the computed [`MetricReport`]; `error` explains why one is missing
/// (evaluation failure, degenerate targets, too few points).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub n_points: usize,
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SplitMetrics {
    fn from_report(report: &MetricReport) -> Self {
        SplitMetrics {
            split: report.split.clone(),
            n_points: report.n_points,
            tau: report.tau,
            nmse: Some(report.nmse),
            acc_tau: Some(report.acc_tau),
            error: None,
        }
    }
}

/// Self-describing record of one run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub dataset_fingerprint: String,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub backend_id: String,
    /// `"reduced-loop"` when both reasoning pathways are disabled
    /// (insight probability zero and every idea category off).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<String>,
    pub iterations_completed: u64,
    pub candidates: usize,
    pub best_expression: Option<String>,
    pub best_params: Vec<f64>,
    pub best_score: Option<f64>,
    pub final_metrics: Vec<SplitMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    pub stopped_on_wall_clock: bool,
}

#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
}

/// Execute a full run from a config file. Artifacts land in the output
/// directory: `history.jsonl`, `prompts.jsonl`, `insights.jsonl`,
/// `ideas.json`, `manifest.json`. On an aborted run the partial artifacts
/// are preserved and the abort is reported as a backend error.
pub fn cmd_run(
    config_path: &Path,
    out_override: Option<&Path>,
    script_override: Option<&Path>,
) -> Result<RunSummary, CliError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(script) = script_override {
        config.backend = BackendConfig::Replay { script: script.to_path_buf() };
    }
    if let Some(out) = out_override {
        config.output = Some(out.to_path_buf());
    }
    run_from_config(config_path, config)
}

pub fn run_from_config(config_path: &Path, config: RunConfig) -> Result<RunSummary, CliError> {
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);

    // dataset first: a missing dataset must fail before any backend call
    let data = Dataset::load(&config.dataset.csv, &config.dataset.meta)?;
    let fingerprint = dataset_fingerprint(&config.dataset.csv, &config.dataset.meta)?;

    let output_dir = config.output.clone().unwrap_or_else(|| {
        let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        config_path.parent().unwrap_or(Path::new(".")).join(format!("{stem}_run"))
    });
    std::fs::create_dir_all(&output_dir).map_err(|e| io_err("creating run directory", e))?;

    let backend = build_backend(&config)?;
    let templates = match &config.prompts {
        Some(dir) => PromptTemplates::from_dir(dir).map_err(|e| io_err("loading templates", e))?,
        None => PromptTemplates::default(),
    };
    let library_path =
        config.idea_library.clone().unwrap_or_else(|| output_dir.join("ideas.json"));
    let library = IdeaLibrary::at_path(library_path)
        .map_err(|e| CliError::Other(format!("idea library: {e}")))?;

    let output = engine::run(&config.engine, &config.fit, &data, backend.as_ref(), &templates, library);

    // artifacts are written unconditionally so aborted runs stay inspectable
    write_jsonl(&output_dir.join("history.jsonl"), &output.history)?;
    write_jsonl(&output_dir.join("prompts.jsonl"), &output.prompts)?;
    write_jsonl(&output_dir.join("insights.jsonl"), &output.insights)?;
    output
        .library
        .flush()
        .map_err(|e| CliError::Other(format!("idea library: {e}")))?;

    let tau = config.tau.unwrap_or_else(|| data.default_tau());
    let (final_metrics, reports) = match &output.best {
        Some(best) => split_metrics(best, &data, tau),
        None => (Vec::new(), Vec::new()),
    };
    write_jsonl(&output_dir.join("metrics.jsonl"), &reports)?;
    let iterations_completed = output.history.last().map(|r| r.iteration).unwrap_or(0);
    let ablation = (config.engine.insight_probability == 0.0
        && config.engine.idea_toggles.all_off())
    .then(|| "reduced-loop".to_string());

    let manifest = RunManifest {
        config,
        dataset_fingerprint: fingerprint,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        backend_id: backend.id().to_string(),
        ablation,
        iterations_completed,
        candidates: output.history.len(),
        best_expression: output.best.as_ref().map(|c| c.display_form()),
        best_params: output
            .best
            .as_ref()
            .and_then(|c| c.fit.as_ref())
            .map(|f| f.params.clone())
            .unwrap_or_default(),
        best_score: output.best.as_ref().and_then(|c| c.score()),
        final_metrics,
        aborted: output.aborted.clone(),
        stopped_on_wall_clock: output.stopped_on_wall_clock,
    };
    let manifest_path = output_dir.join("manifest.json");
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Other(format!("manifest: {e}")))?;
    std::fs::write(&manifest_path, manifest_text).map_err(|e| io_err("writing manifest", e))?;

    if let Some(reason) = output.aborted {
        return Err(CliError::Backend(format!(
            "run aborted ({reason}); partial artifacts in {}",
            output_dir.display()
        )));
    }
    Ok(RunSummary { output_dir, manifest_path, manifest })
}

fn build_backend(config: &RunConfig) -> Result<Box<dyn ChatBackend>, CliError> {
    let inner: Box<dyn ChatBackend> = match &config.backend {
        BackendConfig::Replay { script } => Box::new(
            ReplayBackend::from_path(script).map_err(|e| CliError::Backend(e.to_string()))?,
        ),
        BackendConfig::Live { model, base_url, max_retries, initial_backoff_ms, timeout_s } => {
            let base_url = base_url
                .clone()
                .or_else(|| std::env::var(ENV_API_BASE).ok())
                .ok_or_else(|| {
                    CliError::Backend(format!("no base_url in config and {ENV_API_BASE} unset"))
                })?;
            let model = std::env::var(ENV_MODEL)
                .ok()
                .or_else(|| model.clone())
                .ok_or_else(|| {
                    CliError::Backend(format!("no model in config and {ENV_MODEL} unset"))
                })?;
            let mut http = HttpConfig {
                base_url,
                model,
                api_key: std::env::var(ENV_API_KEY).ok(),
                max_retries: max_retries.unwrap_or(3),
                initial_backoff_ms: initial_backoff_ms.unwrap_or(250),
                timeout_s: timeout_s.unwrap_or(120),
            };
            if http.base_url.is_empty() {
                return Err(CliError::Backend("empty base_url".into()));
            }
            if http.max_retries > 10 {
                http.max_retries = 10;
            }
            Box::new(HttpBackend::new(http).map_err(|e| CliError::Backend(e.to_string()))?)
        }
    };
    let s = &config.sampling;
    if s.main.is_some() || s.data.is_some() || s.idea.is_some() {
        Ok(Box::new(SamplingOverrideBackend::new(inner, s.main, s.data, s.idea)))
    } else {
        Ok(inner)
    }
}

/// Compute per-split metrics for the final best candidate; successful splits
/// also yield the [`MetricReport`] records written to `metrics.jsonl`.
fn split_metrics(
    best: &Candidate,
    data: &Dataset,
    tau: f64,
) -> (Vec<SplitMetrics>, Vec<MetricReport>) {
    let names = data.variable_names();
    let expression = best.expression.as_ref();
    let params = best.fit.as_ref().map(|f| f.params.as_slice()).unwrap_or(&[]);
    let mut summaries = Vec::new();
    let mut reports = Vec::new();
    for &split in &Split::ALL {
        let targets = data.targets(split);
        let base = SplitMetrics {
            split: split.name().to_string(),
            n_points: targets.len(),
            tau,
            nmse: None,
            acc_tau: None,
            error: None,
        };
        let Some(e) = expression else {
            summaries
                .push(SplitMetrics { error: Some("best candidate has no expression".into()), ..base });
            continue;
        };
        if targets.len() < 2 {
            summaries.push(SplitMetrics {
                error: Some("split has fewer than two points".into()),
                ..base
            });
            continue;
        }
        match evaluate(e, params, &data.inputs(split), &names) {
            Ok(preds) => match metrics::report(&preds, &targets, tau, split.name()) {
                Ok(report) => {
                    summaries.push(SplitMetrics::from_report(&report));
                    reports.push(report);
                }
                Err(err) => summaries.push(SplitMetrics { error: Some(err.to_string()), ..base }),
            },
            Err(err) => summaries.push(SplitMetrics { error: Some(err.to_string()), ..base }),
        }
    }
    (summaries, reports)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| CliError::Other(format!("serializing {}: {e}", path.display())))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err("creating log file", e))?;
    file.write_all(&out).map_err(|e| io_err("writing log file", e))?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err("hashing file", e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Joint digest of the dataset CSV and its metadata sidecar.
pub fn dataset_fingerprint(csv: &Path, meta: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(csv).map_err(|e| io_err("reading dataset csv", e))?);
    hasher.update(std::fs::read(meta).map_err(|e| io_err("reading dataset meta", e))?);
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

// ── sweep ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Deserialize)]
pub struct SweepVariant {
    pub name: String,
    #[serde(default)]
    pub use_positive: bool,
    #[serde(default)]
    pub use_negative: bool,
    #[serde(default)]
    pub use_invalid: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepConfig {
    pub insight_probabilities: Vec<f64>,
    pub idea_variants: Vec<SweepVariant>,
}

#[derive(Deserialize)]
struct SweepFile {
    sweep: Option<SweepConfig>,
}

#[derive(Debug, Serialize)]
pub struct SweepCell {
    pub directory: String,
    pub insight_probability: f64,
    pub variant: String,
    pub best_score: Option<f64>,
    pub id_nmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run the cartesian product of insight probabilities and idea-toggle
/// variants described by the `[sweep]` table of the run config. Each cell
/// writes a full run directory; a summary CSV lands at the sweep root.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path) -> Result<Vec<SweepCell>, CliError> {
    let base = RunConfig::load(config_path)?;
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let sweep: SweepConfig = toml::from_str::<SweepFile>(&text)
        .map_err(|e| CliError::Config(e.to_string()))?
        .sweep
        .ok_or_else(|| CliError::Config("config has no [sweep] table".into()))?;
    if sweep.insight_probabilities.is_empty() || sweep.idea_variants.is_empty() {
        return Err(CliError::Config("sweep axes must be non-empty".into()));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| io_err("creating sweep directory", e))?;
    let mut cells = Vec::new();
    for &p in &sweep.insight_probabilities {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Config(format!("insight probability {p} outside [0, 1]")));
        }
        for variant in &sweep.idea_variants {
            let cell_dir = out_dir.join(format!("p{p}_{}", variant.name));
            let mut config = base.clone();
            config.engine.insight_probability = p;
            config.engine.idea_toggles = eqsearch_core::engine::IdeaToggles {
                use_positive: variant.use_positive,
                use_negative: variant.use_negative,
                use_invalid: variant.use_invalid,
            };
            config.output = Some(cell_dir.clone());
            config.idea_library = Some(cell_dir.join("ideas.json"));
            let (best_score, id_nmse, error) = match run_from_config(config_path, config) {
                Ok(summary) => {
                    let id = summary
                        .manifest
                        .final_metrics
                        .iter()
                        .find(|m| m.split == "id_test")
                        .and_then(|m| m.nmse);
                    (summary.manifest.best_score, id, None)
                }
                Err(e) => (None, None, Some(e.to_string())),
            };
            cells.push(SweepCell {
                directory: cell_dir.display().to_string(),
                insight_probability: p,
                variant: variant.name.clone(),
                best_score,
                id_nmse,
                error,
            });
        }
    }

    let mut csv = String::from("directory,insight_probability,variant,best_score,id_nmse,error\n");
    for cell in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.directory,
            cell.insight_probability,
            cell.variant,
            cell.best_score.map(|v| v.to_string()).unwrap_or_default(),
            cell.id_nmse.map(|v| v.to_string()).unwrap_or_default(),
            cell.error.clone().unwrap_or_default().replace(',', ";"),
        ));
    }
    std::fs::write(out_dir.join("sweep_summary.csv"), csv)
        .map_err(|e| io_err("writing sweep summary", e))?;
    Ok(cells)
}
