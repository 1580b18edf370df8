//! LLM-in-the-loop symbolic regression.
//!
//! The crate discovers closed-form equations for tabular data by running a
//! language model in a closed loop around a generate/fit/score kernel:
//!
//! - [`expr`] — the equation-skeleton grammar: parsing, rendering, and safe
//!   batch evaluation of candidate expressions.
//! - [`fit`] — BFGS parameter optimization of parsed skeletons with numerical
//!   gradients and seeded multi-restart.
//! - [`metrics`] — NMSE, tolerance accuracy, and the running valid-solution
//!   rate.
//! - [`data`] — benchmark dataset generation (ODE simulation or direct
//!   evaluation), CSV ingestion, train/ID/OOD splits, noise injection, and
//!   uniform resampling.
//! - [`llmio`] — chat backends: a live HTTP client, a deterministic replay
//!   backend, and a programmable oracle for tests.
//! - [`insight`] — residual-driven structural analysis of the data, refreshed
//!   whenever the best score improves.
//! - [`ideas`] — categorized reflection on evaluated candidates, persisted in
//!   an idea library with recency-based sampling.
//! - [`engine`] — the search loop tying everything together, with a JSONL
//!   event log suitable for offline reporting.
//!
//! Shared configuration lives in [`config`]; prompt templates in
//! [`templates`].

pub mod config;
pub mod data;
pub mod engine;
pub mod expr;
pub mod fit;
pub mod ideas;
pub mod insight;
pub mod llmio;
pub mod metrics;
pub mod seeding;
pub mod templates;

pub use data::Dataset;
pub use engine::{Candidate, EngineConfig, RunOutput};
pub use expr::Expression;
pub use fit::{FitConfig, FitResult};
