//! Data-aware insight: structured free-text analysis of the dataset,
//! refreshed from residuals whenever the best score improves.
//!
//! The initial insight is built from a uniform sample of the train split.
//! Each refinement recomputes residuals of the current best equation over
//! the whole train split, resamples rows with the residual column attached,
//! and asks the data-analysis model for a revised reading. The text is kept
//! verbatim and injected into generation prompts.

use crate::data::{resample, DataError, Dataset, ResampledView, Split};
use crate::expr::{evaluate, EvalError, Expression};
use crate::llmio::{ChatBackend, ChatRequest, LlmError, Role};
use crate::templates::{fmt_sig6, render, PromptTemplates, DATA_SYSTEM_PROMPT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows sampled into each analysis view (clamped to the train-split size).
pub const VIEW_SIZE: usize = 100;

/// One version of the evolving analysis. `trigger_score` is `None` for the
/// initial version and the new best score for every refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    pub content: String,
    pub iteration: u64,
    pub trigger_score: Option<f64>,
    pub version: u64,
    pub source_view_seed: u64,
}

#[derive(Debug, Error)]
pub enum InsightError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("best candidate failed to evaluate on the train split: {0}")]
    Eval(#[from] EvalError),
}

/// One-paragraph dataset description used in analysis prompts.
pub fn dataset_description(data: &Dataset) -> String {
    let vars: Vec<String> = data
        .variables()
        .iter()
        .map(|v| {
            if v.description.is_empty() {
                format!("{} ({})", v.name, v.unit)
            } else {
                format!("{} ({}): {}", v.name, v.unit, v.description)
            }
        })
        .collect();
    format!(
        "Dataset \"{}\": target `{}` as a function of {} input variable(s): {}.",
        data.name(),
        data.target_name(),
        data.n_vars(),
        vars.join("; ")
    )
}

/// Fixed-width table of a resampled view; one header row, one line per row,
/// six significant digits per cell. A residual column appears iff the view
/// carries residuals.
pub fn render_rows_table(view: &ResampledView, data: &Dataset) -> String {
    let with_residuals = view.rows.first().map(|r| r.residual.is_some()).unwrap_or(false);
    let mut header: Vec<String> = data.variable_names().iter().map(|s| s.to_string()).collect();
    header.push(data.target_name().to_string());
    if with_residuals {
        header.push("residual".to_string());
    }
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| format!("{h:>14}")).collect::<Vec<_>>().join(" "));
    out.push('\n');
    for row in &view.rows {
        let mut cells: Vec<String> = row.x.iter().map(|v| fmt_sig6(*v)).collect();
        cells.push(fmt_sig6(row.y));
        if let Some(res) = row.residual {
            cells.push(fmt_sig6(res));
        }
        out.push_str(&cells.iter().map(|c| format!("{c:>14}")).collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    out
}

fn ask_data_model(
    backend: &dyn ChatBackend,
    prompt: &str,
) -> Result<String, LlmError> {
    let req = ChatRequest::new(Role::Data, DATA_SYSTEM_PROMPT, prompt, 1);
    // one retry on an empty completion, then give up
    for attempt in 0..2 {
        let response = backend.complete(&req)?;
        let content = response.completions.into_iter().next().unwrap_or_default();
        if !content.trim().is_empty() {
            return Ok(content);
        }
        log::warn!("data model returned an empty completion (attempt {})", attempt + 1);
    }
    Err(LlmError::EmptyCompletion("data"))
}

/// Build version 0 of the insight from a residual-free view of the train
/// split. Returns the insight and the rendered prompt for logging.
pub fn initial_insight(
    data: &Dataset,
    backend: &dyn ChatBackend,
    templates: &PromptTemplates,
    view_seed: u64,
) -> Result<(Insight, String), InsightError> {
    let view = resample(data, None, VIEW_SIZE, view_seed)?;
    let prompt = render(
        &templates.insight_initial,
        &[
            ("dataset_description", &dataset_description(data)),
            ("rows_table", &render_rows_table(&view, data)),
            ("target_name", data.target_name()),
            ("requirements", &templates.insight_requirements),
        ],
    );
    let content = ask_data_model(backend, &prompt)?;
    let insight = Insight {
        content,
        iteration: 0,
        trigger_score: None,
        version: 0,
        source_view_seed: view_seed,
    };
    Ok((insight, prompt))
}

/// Refine the insight after a strict best-score improvement.
///
/// `best` is the improving candidate's expression with its fitted `params`
/// and train `score`. Residuals are computed over the entire train split,
/// then resampled into the analysis view.
#[allow(clippy::too_many_arguments)]
pub fn refine_insight(
    best: &Expression,
    params: &[f64],
    score: f64,
    data: &Dataset,
    prev: &Insight,
    backend: &dyn ChatBackend,
    templates: &PromptTemplates,
    iteration: u64,
    view_seed: u64,
) -> Result<(Insight, String), InsightError> {
    let names = data.variable_names();
    let inputs = data.inputs(Split::Train);
    let targets = data.targets(Split::Train);
    let preds = evaluate(best, params, &inputs, &names)?;
    let residuals: Vec<f64> = targets.iter().zip(&preds).map(|(y, p)| y - p).collect();

    let view = resample(data, Some(&residuals), VIEW_SIZE, view_seed)?;
    let prompt = render(
        &templates.insight_refine,
        &[
            ("dataset_description", &dataset_description(data)),
            ("best_equation", &best.render()),
            ("best_score", &format!("{score}")),
            ("previous_insight", &prev.content),
            ("rows_table", &render_rows_table(&view, data)),
            ("requirements", &templates.insight_requirements),
        ],
    );
    let content = ask_data_model(backend, &prompt)?;
    let insight = Insight {
        content,
        iteration,
        trigger_score: Some(score),
        version: prev.version + 1,
        source_view_seed: view_seed,
    };
    Ok((insight, prompt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, SplitIndices, Variable};
    use crate::expr::{parse, InputMatrix};
    use crate::llmio::OracleBackend;

    fn linear_dataset(n_train: usize) -> Dataset {
        let n = n_train + 2;
        let x = InputMatrix::new(n, 1, (0..n).map(|i| i as f64 * 0.5).collect());
        let y: Vec<f64> = (0..n).map(|i| 2.0 * (i as f64 * 0.5) + 1.0).collect();
        let meta = DatasetMeta {
            name: "line".into(),
            benchmark: None,
            variables: vec![Variable::new("x", "1", "input")],
            target_name: "y".into(),
            seed: Some(0),
            noise_sigma: 0.0,
            default_tau: 0.1,
            splits: SplitIndices {
                train: (0..n_train).collect(),
                id_test: vec![n - 2],
                ood_test: vec![n - 1],
            },
        };
        Dataset::new(meta, x, y).unwrap()
    }

    fn passthrough_backend(reply: &str) -> OracleBackend {
        let reply = reply.to_string();
        OracleBackend::new(move |_req| vec![reply.clone()])
    }

    #[test]
    fn initial_insight_is_a_passthrough_at_version_zero() {
        let data = linear_dataset(40);
        let backend = passthrough_backend("y increases monotonically with x");
        let (insight, prompt) =
            initial_insight(&data, &backend, &PromptTemplates::default(), 9).unwrap();
        assert_eq!(insight.content, "y increases monotonically with x");
        assert_eq!(insight.version, 0);
        assert_eq!(insight.trigger_score, None);
        assert!(prompt.contains("Sampled observations"));
        assert!(!prompt.contains("residual"), "initial view must not carry residuals");
    }

    #[test]
    fn small_train_split_clamps_the_view() {
        let data = linear_dataset(50);
        let backend = OracleBackend::new(move |req| {
            // 50 train rows → clamped view of 50 all-numeric table lines
            let table_lines = req
                .user_prompt
                .lines()
                .filter(|l| {
                    let cells: Vec<&str> = l.split_whitespace().collect();
                    cells.len() == 2 && cells.iter().all(|c| c.parse::<f64>().is_ok())
                })
                .count();
            assert_eq!(table_lines, 50);
            vec!["ok".to_string()]
        });
        initial_insight(&data, &backend, &PromptTemplates::default(), 1).unwrap();
    }

    #[test]
    fn initial_insight_is_deterministic() {
        let data = linear_dataset(30);
        let backend = passthrough_backend("stable");
        let t = PromptTemplates::default();
        let a = initial_insight(&data, &backend, &t, 4).unwrap();
        let b = initial_insight(&data, &backend, &t, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_completion_retried_once_then_error() {
        let data = linear_dataset(10);
        let calls = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let calls2 = calls.clone();
        let backend = OracleBackend::new(move |_req| {
            calls2.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            vec!["  ".to_string()]
        });
        let err = initial_insight(&data, &backend, &PromptTemplates::default(), 0).unwrap_err();
        assert!(matches!(err, InsightError::Llm(LlmError::EmptyCompletion("data"))));
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 2);
    }

    #[test]
    fn perfect_fit_renders_zero_residuals() {
        let data = linear_dataset(25);
        let e = parse("params[0]*x + params[1]", &["x"]).unwrap();
        let prev = Insight {
            content: "prior".into(),
            iteration: 0,
            trigger_score: None,
            version: 0,
            source_view_seed: 0,
        };
        let captured = std::sync::Arc::new(std::sync::Mutex::new(String::new()));
        let captured2 = captured.clone();
        let backend = OracleBackend::new(move |req| {
            *captured2.lock().unwrap() = req.user_prompt.clone();
            vec!["refined".to_string()]
        });
        let (insight, prompt) = refine_insight(
            &e,
            &[2.0, 1.0],
            0.0,
            &data,
            &prev,
            &backend,
            &PromptTemplates::default(),
            3,
            17,
        )
        .unwrap();
        assert_eq!(insight.version, 1);
        assert_eq!(insight.trigger_score, Some(0.0));
        assert_eq!(insight.iteration, 3);
        assert_eq!(prompt, *captured.lock().unwrap());
        // the residual column exists and is all zeros
        assert!(prompt.contains("residual"));
        for line in prompt.lines() {
            let cells: Vec<&str> = line.split_whitespace().collect();
            if cells.len() == 3 && cells[0].parse::<f64>().is_ok() {
                let res: f64 = cells[2].parse().unwrap();
                assert!(res.abs() < 1e-12, "nonzero residual in: {line}");
            }
        }
    }

    #[test]
    fn zero_predictor_residuals_equal_targets() {
        let data = linear_dataset(20);
        let e = parse("0*x", &["x"]).unwrap();
        let prev = Insight {
            content: "prior".into(),
            iteration: 0,
            trigger_score: None,
            version: 0,
            source_view_seed: 0,
        };
        let backend = passthrough_backend("interaction term x*v suspected");
        let (insight, prompt) = refine_insight(
            &e,
            &[],
            -1.0,
            &data,
            &prev,
            &backend,
            &PromptTemplates::default(),
            1,
            5,
        )
        .unwrap();
        assert_eq!(insight.content, "interaction term x*v suspected");
        // residual column equals the target column for f == 0
        for line in prompt.lines() {
            let cells: Vec<&str> = line.split_whitespace().collect();
            if cells.len() == 3 {
                if let (Ok(y), Ok(res)) = (cells[1].parse::<f64>(), cells[2].parse::<f64>()) {
                    assert!((y - res).abs() < 1e-9, "residual != target in: {line}");
                }
            }
        }
    }
}
