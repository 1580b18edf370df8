//! Inductive reflection on evaluated candidates.
//!
//! Every candidate is categorized against the best score seen so far:
//! an evaluation error is INVALID, a strictly better score is POSITIVE,
//! everything else is NEGATIVE. A category-specific prompt then asks the
//! reflection model for a short reusable idea, which is appended to the
//! persistent [`IdeaLibrary`]. Prompt construction later draws a few ideas
//! per category from the most recent fraction of each list.

use crate::llmio::{ChatBackend, ChatRequest, LlmError, Role};
use crate::seeding::mix_seed;
use crate::templates::{render, PromptTemplates, IDEA_SYSTEM_PROMPT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// Fraction of each category list eligible for prompt sampling (most recent).
pub const DEFAULT_RECENCY_LAMBDA: f64 = 0.5;
/// Ideas drawn per category for each prompt rebuild.
pub const DEFAULT_IDEAS_PER_CATEGORY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Positive,
    Negative,
    Invalid,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Positive, Category::Negative, Category::Invalid];

    pub fn name(self) -> &'static str {
        match self {
            Category::Positive => "POSITIVE",
            Category::Negative => "NEGATIVE",
            Category::Invalid => "INVALID",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Categorize one evaluated candidate.
///
/// `score` is `None` when the candidate failed to parse, fit, or evaluate.
/// `s_star` is the best score seen *before* this candidate (negative
/// infinity at the start of a run); the comparison is strict.
pub fn categorize(score: Option<f64>, s_star: f64) -> Category {
    match score {
        None => Category::Invalid,
        Some(s) if s > s_star => Category::Positive,
        Some(_) => Category::Negative,
    }
}

/// One extracted reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Idea {
    pub id: u64,
    pub category: Category,
    /// The reflection text returned by the model, verbatim.
    pub content: String,
    /// Rendered candidate plus its score or error.
    pub context: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    pub iteration: u64,
}

/// What the extraction prompt needs to know about a candidate.
#[derive(Debug, Clone)]
pub struct ExtractionInput {
    /// Rendered expression for valid candidates, raw model text otherwise.
    pub candidate: String,
    pub score: Option<f64>,
    pub error: Option<String>,
    /// Best score before this candidate.
    pub s_star: f64,
    pub iteration: u64,
}

/// Ask the reflection model for an idea about one candidate.
///
/// `prompt_state` is the generation prompt that produced the candidate; it is
/// passed through as context. Returns the rendered prompt alongside the idea
/// so callers can log it verbatim.
pub fn extract(
    input: &ExtractionInput,
    category: Category,
    prompt_state: &str,
    templates: &PromptTemplates,
    backend: &dyn ChatBackend,
) -> Result<(Idea, String), LlmError> {
    let score_text = input.score.map(|s| format!("{s}")).unwrap_or_else(|| "n/a".to_string());
    let s_star_text =
        if input.s_star == f64::NEG_INFINITY { "-inf".to_string() } else { format!("{}", input.s_star) };
    let template = match category {
        Category::Positive => &templates.idea_positive,
        Category::Negative => &templates.idea_negative,
        Category::Invalid => &templates.idea_invalid,
    };
    let error_text = input.error.clone().unwrap_or_default();
    let prompt = render(
        template,
        &[
            ("candidate", &input.candidate),
            ("score", &score_text),
            ("s_star", &s_star_text),
            ("error", &error_text),
            ("generation_prompt", prompt_state),
        ],
    );
    let req = ChatRequest::new(Role::Idea, IDEA_SYSTEM_PROMPT, &prompt, 1);
    let response = backend.complete(&req)?;
    let content = response.completions.into_iter().next().unwrap_or_default();
    if content.trim().is_empty() {
        return Err(LlmError::EmptyCompletion("idea"));
    }
    let context = match (&input.score, &input.error) {
        (Some(s), _) => format!("{} | score {s}", input.candidate),
        (None, Some(e)) => format!("{} | error: {e}", input.candidate),
        (None, None) => input.candidate.clone(),
    };
    let idea = Idea {
        id: 0, // assigned by the library on insert
        category,
        content,
        context,
        fitness: input.score,
        iteration: input.iteration,
    };
    Ok((idea, prompt))
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("idea library I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("idea library format: {0}")]
    Format(#[from] serde_json::Error),
}

/// On-disk shape: one array per category, insertion order preserved.
#[derive(Debug, Default, Serialize, Deserialize)]
struct LibraryFile {
    positive: Vec<FileIdea>,
    negative: Vec<FileIdea>,
    invalid: Vec<FileIdea>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileIdea {
    id: u64,
    iteration: u64,
    content: String,
    context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fitness: Option<f64>,
}

impl FileIdea {
    fn into_idea(self, category: Category) -> Idea {
        Idea {
            id: self.id,
            category,
            content: self.content,
            context: self.context,
            fitness: self.fitness,
            iteration: self.iteration,
        }
    }

    fn from_idea(idea: &Idea) -> Self {
        FileIdea {
            id: idea.id,
            iteration: idea.iteration,
            content: idea.content.clone(),
            context: idea.context.clone(),
            fitness: idea.fitness,
        }
    }
}

/// Append-only categorized store of ideas, optionally flushed to a JSON file
/// on every insert. Ids are a single monotone sequence across categories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdeaLibrary {
    positive: Vec<Idea>,
    negative: Vec<Idea>,
    invalid: Vec<Idea>,
    next_id: u64,
    path: Option<PathBuf>,
}

impl IdeaLibrary {
    /// In-memory library (tests, dry runs).
    pub fn in_memory() -> Self {
        IdeaLibrary::default()
    }

    /// Library persisted at `path`; loads existing content for warm restarts.
    pub fn at_path(path: PathBuf) -> Result<Self, LibraryError> {
        let mut lib = if path.exists() {
            let file: LibraryFile = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let mut lib = IdeaLibrary {
                positive: file.positive.into_iter().map(|i| i.into_idea(Category::Positive)).collect(),
                negative: file.negative.into_iter().map(|i| i.into_idea(Category::Negative)).collect(),
                invalid: file.invalid.into_iter().map(|i| i.into_idea(Category::Invalid)).collect(),
                next_id: 0,
                path: None,
            };
            lib.next_id = lib
                .positive
                .iter()
                .chain(&lib.negative)
                .chain(&lib.invalid)
                .map(|i| i.id + 1)
                .max()
                .unwrap_or(0);
            lib
        } else {
            IdeaLibrary::default()
        };
        lib.path = Some(path);
        Ok(lib)
    }

    pub fn category(&self, category: Category) -> &[Idea] {
        match category {
            Category::Positive => &self.positive,
            Category::Negative => &self.negative,
            Category::Invalid => &self.invalid,
        }
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len() + self.invalid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append an idea (assigning it the next id) and flush to disk when a
    /// persistence path is configured.
    pub fn update(&mut self, mut idea: Idea) -> Result<u64, LibraryError> {
        idea.id = self.next_id;
        self.next_id += 1;
        let id = idea.id;
        match idea.category {
            Category::Positive => self.positive.push(idea),
            Category::Negative => self.negative.push(idea),
            Category::Invalid => self.invalid.push(idea),
        }
        self.flush()?;
        Ok(id)
    }

    /// Write the library to its persistence path, if any.
    pub fn flush(&self) -> Result<(), LibraryError> {
        let Some(path) = &self.path else { return Ok(()) };
        let file = LibraryFile {
            positive: self.positive.iter().map(FileIdea::from_idea).collect(),
            negative: self.negative.iter().map(FileIdea::from_idea).collect(),
            invalid: self.invalid.iter().map(FileIdea::from_idea).collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Draw up to `per_category` ideas per category, uniformly without
    /// replacement from the most recent `ceil(lambda * len)` entries of each
    /// list, concatenated in POSITIVE, NEGATIVE, INVALID order.
    pub fn sample_recent(&self, lambda: f64, per_category: usize, seed: u64) -> Vec<Idea> {
        assert!(lambda > 0.0 && lambda <= 1.0, "lambda must be in (0, 1]");
        assert!(per_category > 0, "per_category must be positive");
        let mut out = Vec::new();
        for category in Category::ALL {
            let list = self.category(category);
            if list.is_empty() {
                continue;
            }
            let pool_len = ((lambda * list.len() as f64).ceil() as usize).clamp(1, list.len());
            let pool = &list[list.len() - pool_len..];
            let take = per_category.min(pool.len());
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                seed,
                "idea_sample",
                &[category as u64],
            ));
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, pool.len(), take).into_iter().collect();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|k| pool[k].clone()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn idea(category: Category, text: &str, iteration: u64) -> Idea {
        Idea {
            id: 0,
            category,
            content: text.to_string(),
            context: format!("ctx:{text}"),
            fitness: match category {
                Category::Invalid => None,
                _ => Some(-1.0),
            },
            iteration,
        }
    }

    #[test]
    fn categorize_follows_the_decision_table() {
        // errors are invalid regardless of the best score
        assert_eq!(categorize(None, f64::NEG_INFINITY), Category::Invalid);
        assert_eq!(categorize(None, -0.5), Category::Invalid);
        // any finite score beats -inf
        assert_eq!(categorize(Some(-1e9), f64::NEG_INFINITY), Category::Positive);
        // strict comparison against a finite best
        assert_eq!(categorize(Some(-0.01), -0.5), Category::Positive);
        assert_eq!(categorize(Some(-0.5), -0.5), Category::Negative);
        assert_eq!(categorize(Some(-0.9), -0.5), Category::Negative);
    }

    #[test]
    fn extract_wraps_the_completion_with_metadata() {
        use crate::llmio::OracleBackend;
        use crate::templates::PromptTemplates;
        let backend = OracleBackend::new(|req| {
            assert_eq!(req.role, crate::llmio::Role::Idea);
            vec!["always balance parentheses".to_string()]
        });
        let templates = PromptTemplates::default();

        let invalid = ExtractionInput {
            candidate: "sin(".into(),
            score: None,
            error: Some("parse error (syntax) at position 4: unexpected end of input".into()),
            s_star: f64::NEG_INFINITY,
            iteration: 3,
        };
        let (idea, prompt) =
            extract(&invalid, Category::Invalid, "the prompt", &templates, &backend).unwrap();
        assert_eq!(idea.content, "always balance parentheses");
        assert_eq!(idea.category, Category::Invalid);
        assert_eq!(idea.fitness, None);
        assert_eq!(idea.iteration, 3);
        assert!(idea.context.contains("sin(") && idea.context.contains("error"));
        assert!(prompt.contains("sin(") && prompt.contains("unexpected end of input"));
        assert!(prompt.contains("the prompt"), "generation context not threaded through");

        let positive = ExtractionInput {
            candidate: "(params[0] * x)".into(),
            score: Some(-1e-6),
            error: None,
            s_star: -0.5,
            iteration: 4,
        };
        let (idea, _) =
            extract(&positive, Category::Positive, "", &templates, &backend).unwrap();
        assert_eq!(idea.fitness, Some(-1e-6));
        assert!(idea.context.contains("score -0.000001"));
    }

    #[test]
    fn update_appends_in_order_with_monotone_ids() {
        let mut lib = IdeaLibrary::in_memory();
        for i in 0..100u64 {
            let cat = Category::ALL[(i % 3) as usize];
            let id = lib.update(idea(cat, &format!("i{i}"), i)).unwrap();
            assert_eq!(id, i);
        }
        assert_eq!(lib.len(), 100);
        let mut all: Vec<u64> = Category::ALL
            .iter()
            .flat_map(|c| lib.category(*c).iter().map(|i| i.id))
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        // per-category insertion order is the id order
        for c in Category::ALL {
            let ids: Vec<u64> = lib.category(c).iter().map(|i| i.id).collect();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            assert_eq!(ids, sorted);
        }
    }

    #[test]
    fn first_append_lands_in_its_category() {
        let mut lib = IdeaLibrary::in_memory();
        lib.update(idea(Category::Positive, "p", 0)).unwrap();
        assert_eq!(lib.category(Category::Positive).len(), 1);
        assert_eq!(lib.category(Category::Negative).len(), 0);
        assert_eq!(lib.category(Category::Invalid).len(), 0);
    }

    #[test]
    fn persistence_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ideas.json");
        let mut lib = IdeaLibrary::at_path(path.clone()).unwrap();
        lib.update(idea(Category::Positive, "keep sin terms", 1)).unwrap();
        lib.update(idea(Category::Invalid, "balance parens", 1)).unwrap();
        lib.update(idea(Category::Negative, "avoid x^9", 2)).unwrap();

        let mut reloaded = IdeaLibrary::at_path(path).unwrap();
        assert_eq!(lib, reloaded);
        // warm restart continues the id sequence
        let id = reloaded.update(idea(Category::Positive, "next", 3)).unwrap();
        assert_eq!(id, 3);
    }

    #[test]
    fn invalid_ideas_carry_no_fitness_in_the_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ideas.json");
        let mut lib = IdeaLibrary::at_path(path.clone()).unwrap();
        lib.update(idea(Category::Invalid, "x", 0)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("fitness"));
        assert!(text.contains("\"invalid\""));
    }

    #[test]
    fn sample_recent_respects_the_recency_pool() {
        let mut lib = IdeaLibrary::in_memory();
        for i in 0..10u64 {
            lib.update(idea(Category::Positive, &format!("p{i}"), i)).unwrap();
        }
        // lambda 0.5 over 10 entries: pool is ids 5..9
        for seed in 0..50 {
            let got = lib.sample_recent(0.5, 3, seed);
            assert_eq!(got.len(), 3);
            for g in &got {
                assert!(g.id >= 5, "idea {} outside the recent half", g.id);
            }
        }
    }

    #[test]
    fn sample_recent_small_category_returns_everything() {
        let mut lib = IdeaLibrary::in_memory();
        lib.update(idea(Category::Negative, "a", 0)).unwrap();
        lib.update(idea(Category::Negative, "b", 0)).unwrap();
        let got = lib.sample_recent(0.5, 3, 7);
        // lambda halves the pool to one entry; min(3, 1) = 1
        assert_eq!(got.len(), 1);
        assert!(lib.sample_recent(1.0, 3, 7).len() == 2);
    }

    #[test]
    fn sample_recent_empty_library() {
        let lib = IdeaLibrary::in_memory();
        assert!(lib.sample_recent(0.5, 3, 0).is_empty());
    }

    #[test]
    fn sample_recent_concatenates_in_category_order() {
        let mut lib = IdeaLibrary::in_memory();
        lib.update(idea(Category::Invalid, "i", 0)).unwrap();
        lib.update(idea(Category::Positive, "p", 0)).unwrap();
        lib.update(idea(Category::Negative, "n", 0)).unwrap();
        let got = lib.sample_recent(1.0, 3, 0);
        let cats: Vec<Category> = got.iter().map(|i| i.category).collect();
        assert_eq!(cats, vec![Category::Positive, Category::Negative, Category::Invalid]);
    }
}
