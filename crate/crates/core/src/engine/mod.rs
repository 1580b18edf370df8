//! The search loop: sample candidate skeletons, fit and score them,
//! reflect on every outcome, refresh the data insight on improvement, and
//! rebuild the generation prompt from the experience buffer, the insight,
//! and recently extracted ideas.
//!
//! Per candidate, in order: score; idea extraction; then — only on a strict
//! best-score improvement — insight refinement, best update, and buffer
//! append. Ideas are sampled and the prompt rebuilt after each iteration's
//! candidate batch.
//!
//! Candidate fits run in parallel (they are pure given their seeds); all
//! backend calls and state updates happen serially in candidate order, so a
//! replay-backed run is a pure function of (config, dataset, script) and its
//! logs are byte-identical across executions.

mod prompt;

pub use prompt::{build_prompt, extract_expression_text, PromptInputs};
pub use prompt::{HISTORY_HEADER, IDEAS_HEADER, INSIGHT_HEADER};

use crate::data::{Dataset, Split};
use crate::expr::{parse, Expression};
use crate::fit::{fit, FitConfig, FitResult};
use crate::ideas::{categorize, extract, Category, ExtractionInput, Idea, IdeaLibrary};
use crate::insight::{initial_insight, refine_insight, Insight};
use crate::llmio::{ChatBackend, ChatRequest, Role};
use crate::metrics::{valid_rate, VALID_RATE_WINDOW};
use crate::seeding::mix_seed;
use crate::templates::{PromptTemplates, MAIN_SYSTEM_PROMPT};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;
use std::time::Instant;

/// Which idea categories are injected into prompts. Storage and extraction
/// are unaffected; the toggles only filter prompt sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdeaToggles {
    pub use_positive: bool,
    pub use_negative: bool,
    pub use_invalid: bool,
}

impl Default for IdeaToggles {
    fn default() -> Self {
        IdeaToggles { use_positive: true, use_negative: true, use_invalid: true }
    }
}

impl IdeaToggles {
    pub fn all_off(self) -> bool {
        !self.use_positive && !self.use_negative && !self.use_invalid
    }

    fn admits(self, category: Category) -> bool {
        match category {
            Category::Positive => self.use_positive,
            Category::Negative => self.use_negative,
            Category::Invalid => self.use_invalid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Iteration budget (T).
    pub iterations: u64,
    /// In-context examples per prompt (k).
    pub in_context_examples: usize,
    /// Candidate skeletons sampled per iteration (b).
    pub samples_per_iteration: usize,
    /// Recency fraction for idea sampling.
    pub lambda: f64,
    /// Ideas drawn per category per prompt rebuild.
    pub ideas_per_category: usize,
    /// Probability that the insight section is injected into a prompt.
    pub insight_probability: f64,
    pub idea_toggles: IdeaToggles,
    pub seed: u64,
    /// Experience-buffer capacity.
    pub buffer_capacity: usize,
    /// Also retain top-scoring non-improving candidates in the buffer.
    pub retain_negative: bool,
    /// Optional wall-clock budget; the loop stops at the next iteration
    /// boundary once exceeded.
    pub max_wall_clock_s: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            iterations: 1000,
            in_context_examples: 3,
            samples_per_iteration: 4,
            lambda: 0.5,
            ideas_per_category: 3,
            insight_probability: 1.0,
            idea_toggles: IdeaToggles::default(),
            seed: 0,
            buffer_capacity: 50,
            retain_negative: false,
            max_wall_clock_s: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.in_context_examples == 0 {
            return Err("in_context_examples must be at least 1".into());
        }
        if self.samples_per_iteration == 0 {
            return Err("samples_per_iteration must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err("lambda must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.insight_probability) {
            return Err("insight_probability must be in [0, 1]".into());
        }
        if self.ideas_per_category == 0 {
            return Err("ideas_per_category must be at least 1".into());
        }
        if self.buffer_capacity == 0 {
            return Err("buffer_capacity must be at least 1".into());
        }
        Ok(())
    }
}

/// One retained equation: rendered skeleton, fitted parameters, train score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub expression: String,
    pub params: Vec<f64>,
    pub score: f64,
}

/// Score-ordered store of reference equations for prompting. Duplicate
/// rendered expressions keep only their best-scoring entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceBuffer {
    entries: Vec<BufferEntry>,
    capacity: usize,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ExperienceBuffer { entries: Vec::new(), capacity }
    }

    pub fn insert(&mut self, entry: BufferEntry) {
        if let Some(existing) = self.entries.iter_mut().find(|e| e.expression == entry.expression) {
            if entry.score > existing.score {
                *existing = entry;
            }
        } else {
            self.entries.push(entry);
        }
        self.entries.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        self.entries.truncate(self.capacity);
    }

    /// Best `k` entries, descending score.
    pub fn top(&self, k: usize) -> &[BufferEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One evaluated completion. `category` is INVALID exactly when the
/// completion failed anywhere in the extract/parse/fit/score pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub raw_completion: String,
    pub expression: Option<Expression>,
    pub fit: Option<FitResult>,
    pub category: Category,
    pub iteration: u64,
    pub error: Option<String>,
}

impl Candidate {
    pub fn score(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.score)
    }

    /// Rendered expression for valid candidates, raw text otherwise.
    pub fn display_form(&self) -> String {
        self.expression
            .as_ref()
            .map(|e| e.render())
            .unwrap_or_else(|| self.raw_completion.clone())
    }
}

/// Best-so-far state. `s_star` starts at negative infinity and never
/// decreases.
#[derive(Debug, Clone)]
pub struct BestTracker {
    pub best: Option<Candidate>,
    s_star: f64,
}

impl BestTracker {
    pub fn new() -> Self {
        BestTracker { best: None, s_star: f64::NEG_INFINITY }
    }

    pub fn s_star(&self) -> f64 {
        if self.best.is_none() {
            f64::NEG_INFINITY
        } else {
            self.s_star
        }
    }

    fn advance(&mut self, candidate: Candidate, score: f64) {
        debug_assert!(score > self.s_star());
        self.s_star = score;
        self.best = Some(candidate);
    }
}

impl Default for BestTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// One history line per candidate, serialized as JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub seq: u64,
    pub iteration: u64,
    pub candidate_index: usize,
    pub completion_sha256: String,
    pub expression: Option<String>,
    pub params: Vec<f64>,
    pub score: Option<f64>,
    pub mse: Option<f64>,
    pub nmse_train: Option<f64>,
    pub category: Category,
    /// Best score after this candidate; absent until a first valid candidate.
    pub s_star: Option<f64>,
    /// Valid-solution rate over the most recent candidates (window 40).
    pub valid_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Milliseconds since run start; zero under deterministic backends.
    pub elapsed_ms: u64,
}

/// Every prompt rendered during a run, verbatim, for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub seq: u64,
    pub iteration: u64,
    pub role: String,
    pub purpose: String,
    pub text: String,
}

/// Complete result of a run. `aborted` carries the failure description when
/// the loop stopped on an unrecoverable backend or persistence error; the
/// logs accumulated up to that point remain intact.
#[derive(Debug)]
pub struct RunOutput {
    pub best: Option<Candidate>,
    pub s_star: f64,
    pub history: Vec<HistoryRecord>,
    pub prompts: Vec<PromptRecord>,
    pub insights: Vec<Insight>,
    pub library: IdeaLibrary,
    pub buffer: ExperienceBuffer,
    pub aborted: Option<String>,
    pub stopped_on_wall_clock: bool,
}

/// Prepare one completion: extract, parse, fit. Pure given the seed; safe to
/// run in parallel across a batch.
fn prepare(raw: &str, data: &Dataset, fit_cfg: &FitConfig, fit_seed: u64) -> Prepared {
    let Some(text) = extract_expression_text(raw) else {
        return Prepared {
            raw: raw.to_string(),
            expression: None,
            fit: None,
            error: Some("no expression found in completion".to_string()),
        };
    };
    let names = data.variable_names();
    let expression = match parse(&text, &names) {
        Ok(e) => e,
        Err(e) => {
            return Prepared {
                raw: raw.to_string(),
                expression: None,
                fit: None,
                error: Some(format!("`{text}`: {e}")),
            }
        }
    };
    match fit(&expression, data, fit_cfg, fit_seed) {
        Ok(f) => Prepared { raw: raw.to_string(), expression: Some(expression), fit: Some(f), error: None },
        Err(e) => Prepared {
            raw: raw.to_string(),
            expression: Some(expression),
            fit: None,
            error: Some(e.to_string()),
        },
    }
}

struct Prepared {
    raw: String,
    expression: Option<Expression>,
    fit: Option<FitResult>,
    error: Option<String>,
}

/// Run the extract/parse/fit/score pipeline on one completion and categorize
/// it against the tracker's current best. Never fails: every pipeline error
/// becomes an INVALID candidate with the error recorded.
pub fn ingest_candidate(
    raw: &str,
    data: &Dataset,
    fit_cfg: &FitConfig,
    tracker: &BestTracker,
    iteration: u64,
    fit_seed: u64,
) -> Candidate {
    let prep = prepare(raw, data, fit_cfg, fit_seed);
    let score = prep.fit.as_ref().map(|f| f.score);
    Candidate {
        raw_completion: prep.raw,
        expression: prep.expression,
        fit: prep.fit,
        category: categorize(score, tracker.s_star()),
        iteration,
        error: prep.error,
    }
}

/// Execute the full loop against `data` and `backend`.
pub fn run(
    config: &EngineConfig,
    fit_cfg: &FitConfig,
    data: &Dataset,
    backend: &dyn ChatBackend,
    templates: &PromptTemplates,
    library: IdeaLibrary,
) -> RunOutput {
    config.validate().expect("engine config validated by caller");
    let mut state = RunState::new(config, library);
    let result = state.execute(config, fit_cfg, data, backend, templates);
    let mut output = state.into_output();
    if let Err(message) = result {
        output.aborted = Some(message);
    }
    output
}

struct RunState {
    tracker: BestTracker,
    buffer: ExperienceBuffer,
    library: IdeaLibrary,
    insight: Option<Insight>,
    insights: Vec<Insight>,
    history: Vec<HistoryRecord>,
    prompts: Vec<PromptRecord>,
    window: VecDeque<Category>,
    sampled_ideas: Vec<Idea>,
    seq: u64,
    prompt_seq: u64,
    started: Instant,
    deterministic_clock: bool,
    stopped_on_wall_clock: bool,
}

impl RunState {
    fn new(config: &EngineConfig, library: IdeaLibrary) -> Self {
        RunState {
            tracker: BestTracker::new(),
            buffer: ExperienceBuffer::new(config.buffer_capacity),
            library,
            insight: None,
            insights: Vec::new(),
            history: Vec::new(),
            prompts: Vec::new(),
            window: VecDeque::with_capacity(VALID_RATE_WINDOW),
            sampled_ideas: Vec::new(),
            seq: 0,
            prompt_seq: 0,
            started: Instant::now(),
            deterministic_clock: false,
            stopped_on_wall_clock: false,
        }
    }

    fn log_prompt(&mut self, role: Role, purpose: &str, iteration: u64, text: String) {
        self.prompts.push(PromptRecord {
            seq: self.prompt_seq,
            iteration,
            role: role.name().to_string(),
            purpose: purpose.to_string(),
            text,
        });
        self.prompt_seq += 1;
    }

    fn elapsed_ms(&self) -> u64 {
        if self.deterministic_clock {
            0
        } else {
            self.started.elapsed().as_millis() as u64
        }
    }

    fn execute(
        &mut self,
        config: &EngineConfig,
        fit_cfg: &FitConfig,
        data: &Dataset,
        backend: &dyn ChatBackend,
        templates: &PromptTemplates,
    ) -> Result<(), String> {
        self.deterministic_clock = backend.deterministic();
        let train_targets = data.targets(Split::Train);
        let train_mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
        let dev_mean = train_targets.iter().map(|y| (y - train_mean).powi(2)).sum::<f64>()
            / train_targets.len() as f64;

        let view_seed = mix_seed(config.seed, "insight_view", &[0]);
        let (insight0, prompt0) = initial_insight(data, backend, templates, view_seed)
            .map_err(|e| format!("initial insight failed: {e}"))?;
        self.log_prompt(Role::Data, "insight_initial", 0, prompt0);
        self.insights.push(insight0.clone());
        self.insight = Some(insight0);

        for t in 1..=config.iterations {
            if let Some(budget) = config.max_wall_clock_s {
                if self.started.elapsed().as_secs() >= budget {
                    self.stopped_on_wall_clock = true;
                    log::info!("wall-clock budget reached at iteration {t}");
                    break;
                }
            }

            let p_draw = {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(config.seed, "insight_draw", &[t]));
                rng.random::<f64>() < config.insight_probability
            };
            let generation_prompt = build_prompt(
                &PromptInputs {
                    data,
                    buffer: &self.buffer,
                    insight: self.insight.as_ref().expect("insight initialized"),
                    sampled_ideas: &self.sampled_ideas,
                    k: config.in_context_examples,
                    include_insight: p_draw,
                },
                templates,
            );
            self.log_prompt(Role::Main, "generation", t, generation_prompt.clone());

            let request = ChatRequest::new(
                Role::Main,
                MAIN_SYSTEM_PROMPT,
                &generation_prompt,
                config.samples_per_iteration,
            );
            let response = backend
                .complete(&request)
                .map_err(|e| format!("generation request failed at iteration {t}: {e}"))?;
            if response.completions.len() != config.samples_per_iteration {
                return Err(format!(
                    "backend returned {} completions for b={} at iteration {t}",
                    response.completions.len(),
                    config.samples_per_iteration
                ));
            }

            // phase 1: pure pipelines, parallel across the batch
            let prepared: Vec<Prepared> = response
                .completions
                .par_iter()
                .enumerate()
                .map(|(idx, raw)| {
                    let fit_seed = mix_seed(config.seed, "fit", &[t, idx as u64]);
                    prepare(raw, data, fit_cfg, fit_seed)
                })
                .collect();

            // phase 2: serial, in completion order
            for (idx, prep) in prepared.into_iter().enumerate() {
                self.absorb_candidate(
                    prep,
                    idx,
                    t,
                    config,
                    data,
                    backend,
                    templates,
                    &generation_prompt,
                    dev_mean,
                )?;
            }

            let sample_seed = mix_seed(config.seed, "ideas", &[t]);
            self.sampled_ideas = self
                .library
                .sample_recent(config.lambda, config.ideas_per_category, sample_seed)
                .into_iter()
                .filter(|idea| config.idea_toggles.admits(idea.category))
                .collect();
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn absorb_candidate(
        &mut self,
        prep: Prepared,
        idx: usize,
        t: u64,
        config: &EngineConfig,
        data: &Dataset,
        backend: &dyn ChatBackend,
        templates: &PromptTemplates,
        generation_prompt: &str,
        dev_mean: f64,
    ) -> Result<(), String> {
        let score = prep.fit.as_ref().map(|f| f.score);
        let category = categorize(score, self.tracker.s_star());
        let candidate = Candidate {
            raw_completion: prep.raw,
            expression: prep.expression,
            fit: prep.fit,
            category,
            iteration: t,
            error: prep.error,
        };

        // reflection: one extraction call per candidate; failures are
        // logged and skipped, never fatal
        let extraction = ExtractionInput {
            candidate: candidate.display_form(),
            score,
            error: candidate.error.clone(),
            s_star: self.tracker.s_star(),
            iteration: t,
        };
        match extract(&extraction, category, generation_prompt, templates, backend) {
            Ok((idea, prompt)) => {
                self.log_prompt(Role::Idea, &format!("idea_{}", category.name().to_lowercase()), t, prompt);
                self.library
                    .update(idea)
                    .map_err(|e| format!("idea library persistence failed: {e}"))?;
            }
            Err(e) => log::warn!("idea extraction failed at iteration {t}: {e}"),
        }

        if category == Category::Positive {
            let fit_result = candidate.fit.clone().expect("positive implies fitted");
            let expression = candidate.expression.clone().expect("positive implies parsed");
            let prev = self.insight.as_ref().expect("insight initialized");
            let view_seed = mix_seed(config.seed, "insight_view", &[prev.version + 1]);
            let (new_insight, prompt) = refine_insight(
                &expression,
                &fit_result.params,
                fit_result.score,
                data,
                prev,
                backend,
                templates,
                t,
                view_seed,
            )
            .map_err(|e| format!("insight refinement failed at iteration {t}: {e}"))?;
            self.log_prompt(Role::Data, "insight_refine", t, prompt);
            self.insights.push(new_insight.clone());
            self.insight = Some(new_insight);

            self.tracker.advance(candidate.clone(), fit_result.score);
            self.buffer.insert(BufferEntry {
                expression: expression.render(),
                params: fit_result.params.clone(),
                score: fit_result.score,
            });
        } else if category == Category::Negative && config.retain_negative {
            let fit_result = candidate.fit.as_ref().expect("negative implies fitted");
            self.buffer.insert(BufferEntry {
                expression: candidate.expression.as_ref().unwrap().render(),
                params: fit_result.params.clone(),
                score: fit_result.score,
            });
        }

        if self.window.len() == VALID_RATE_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(category);
        let window: Vec<Category> = self.window.iter().copied().collect();

        let s_star = self.tracker.s_star();
        self.history.push(HistoryRecord {
            seq: self.seq,
            iteration: t,
            candidate_index: idx,
            completion_sha256: hex_sha256(&candidate.raw_completion),
            expression: candidate.expression.as_ref().map(|e| e.render()),
            params: candidate.fit.as_ref().map(|f| f.params.clone()).unwrap_or_default(),
            score,
            mse: candidate.fit.as_ref().map(|f| f.mse),
            nmse_train: candidate.fit.as_ref().and_then(|f| {
                (dev_mean > 0.0).then_some(f.mse / dev_mean)
            }),
            category,
            s_star: s_star.is_finite().then_some(s_star),
            valid_rate: valid_rate(&window),
            error: candidate.error.clone(),
            elapsed_ms: self.elapsed_ms(),
        });
        self.seq += 1;
        Ok(())
    }

    fn into_output(self) -> RunOutput {
        RunOutput {
            best: self.tracker.best,
            s_star: self.tracker.s_star,
            history: self.history,
            prompts: self.prompts,
            insights: self.insights,
            library: self.library,
            buffer: self.buffer,
            aborted: None,
            stopped_on_wall_clock: self.stopped_on_wall_clock,
        }
    }
}

fn hex_sha256(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(out, "{byte:02x}").unwrap();
    }
    out
}
