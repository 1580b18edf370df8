//! Plot-ready CSV tables derived from a run's history log.

use crate::CliError;
use eqsearch_core::engine::HistoryRecord;
use eqsearch_core::ideas::Category;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ReportPaths {
    pub convergence: PathBuf,
    pub valid_rate: PathBuf,
    pub categories: PathBuf,
}

/// Parse a history JSONL file; malformed lines are reported with their
/// one-based line number.
pub fn load_history(path: &Path) -> Result<Vec<HistoryRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: HistoryRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Other(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Build the three report tables from history records.
///
/// - convergence: one row per iteration with the best score and the train
///   NMSE of the best-so-far candidate after that iteration,
/// - valid rate: one row per iteration with the windowed valid-solution rate
///   after that iteration's last candidate,
/// - categories: total candidate count per category.
pub fn build_tables(records: &[HistoryRecord]) -> (String, String, String) {
    let mut convergence = String::from("iteration,best_score,best_nmse_train\n");
    let mut valid = String::from("iteration,valid_rate\n");

    let mut best_nmse: Option<f64> = None;
    let mut i = 0;
    while i < records.len() {
        let iteration = records[i].iteration;
        let mut last = &records[i];
        while i < records.len() && records[i].iteration == iteration {
            if records[i].category == Category::Positive {
                best_nmse = records[i].nmse_train.or(best_nmse);
            }
            last = &records[i];
            i += 1;
        }
        let score = last.s_star.map(|v| v.to_string()).unwrap_or_default();
        let nmse = best_nmse.map(|v| v.to_string()).unwrap_or_default();
        convergence.push_str(&format!("{iteration},{score},{nmse}\n"));
        valid.push_str(&format!("{iteration},{}\n", last.valid_rate));
    }

    let mut categories = String::from("category,count\n");
    for category in Category::ALL {
        let count = records.iter().filter(|r| r.category == category).count();
        categories.push_str(&format!("{category},{count}\n"));
    }
    (convergence, valid, categories)
}

/// Write `convergence.csv`, `valid_rate.csv`, and `categories.csv` next to
/// the history file (or into `out_dir`). Deterministic: re-running on the
/// same history reproduces identical bytes.
pub fn cmd_report(history_path: &Path, out_dir: Option<&Path>) -> Result<ReportPaths, CliError> {
    let records = load_history(history_path)?;
    let (convergence, valid, categories) = build_tables(&records);
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| history_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Other(format!("creating report directory: {e}")))?;
    let paths = ReportPaths {
        convergence: dir.join("convergence.csv"),
        valid_rate: dir.join("valid_rate.csv"),
        categories: dir.join("categories.csv"),
    };
    std::fs::write(&paths.convergence, convergence)
        .map_err(|e| CliError::Other(format!("writing convergence.csv: {e}")))?;
    std::fs::write(&paths.valid_rate, valid)
        .map_err(|e| CliError::Other(format!("writing valid_rate.csv: {e}")))?;
    std::fs::write(&paths.categories, categories)
        .map_err(|e| CliError::Other(format!("writing categories.csv: {e}")))?;
    Ok(paths)
}
