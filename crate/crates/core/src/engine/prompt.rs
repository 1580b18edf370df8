//! Generation-prompt assembly and expression extraction from completions.

use super::ExperienceBuffer;
use crate::data::Dataset;
use crate::expr::GRAMMAR_EBNF;
use crate::ideas::{Category, Idea};
use crate::insight::Insight;
use crate::templates::{render, PromptTemplates};

/// Everything the generation prompt is assembled from.
pub struct PromptInputs<'a> {
    pub data: &'a Dataset,
    pub buffer: &'a ExperienceBuffer,
    pub insight: &'a Insight,
    pub sampled_ideas: &'a [Idea],
    /// In-context example budget (top-k buffer entries).
    pub k: usize,
    /// Whether the insight section is injected this iteration.
    pub include_insight: bool,
}

pub const INSIGHT_HEADER: &str = "## Data insight";
pub const IDEAS_HEADER: &str = "## Ideas from past attempts";
pub const HISTORY_HEADER: &str = "## Reference equations, worst score to best";

/// Render the main generation prompt. Reference equations appear in
/// ascending score order so the strongest sits nearest the reply; the
/// insight and idea sections are omitted entirely when disabled or empty.
pub fn build_prompt(inputs: &PromptInputs<'_>, templates: &PromptTemplates) -> String {
    assert!(inputs.k >= 1, "k must be at least 1");
    let variables_block: String = inputs
        .data
        .variables()
        .iter()
        .map(|v| {
            if v.description.is_empty() {
                format!("- {} ({})", v.name, v.unit)
            } else {
                format!("- {} ({}): {}", v.name, v.unit, v.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n");

    let mut history_section = String::new();
    let top = inputs.buffer.top(inputs.k);
    if !top.is_empty() {
        history_section.push_str(HISTORY_HEADER);
        history_section.push('\n');
        for entry in top.iter().rev() {
            let params = entry
                .params
                .iter()
                .map(|p| format!("{p}"))
                .collect::<Vec<_>>()
                .join(", ");
            history_section.push_str(&format!(
                "score={}  expression: {}  fitted params: [{}]\n",
                entry.score, entry.expression, params
            ));
        }
        history_section.push('\n');
    }

    let mut insight_section = String::new();
    if inputs.include_insight {
        insight_section.push_str(INSIGHT_HEADER);
        insight_section.push('\n');
        insight_section.push_str(&inputs.insight.content);
        insight_section.push_str("\n\n");
    }

    let mut ideas_section = String::new();
    if !inputs.sampled_ideas.is_empty() {
        ideas_section.push_str(IDEAS_HEADER);
        ideas_section.push('\n');
        for (category, title) in [
            (Category::Positive, "### From high-scoring equations"),
            (Category::Negative, "### From low-scoring equations"),
            (Category::Invalid, "### From invalid outputs"),
        ] {
            let of_cat: Vec<&Idea> =
                inputs.sampled_ideas.iter().filter(|i| i.category == category).collect();
            if of_cat.is_empty() {
                continue;
            }
            ideas_section.push_str(title);
            ideas_section.push('\n');
            for idea in of_cat {
                ideas_section.push_str("- ");
                ideas_section.push_str(idea.content.trim());
                ideas_section.push('\n');
            }
        }
        ideas_section.push('\n');
    }

    render(
        &templates.main,
        &[
            ("dataset_name", inputs.data.name()),
            ("target_name", inputs.data.target_name()),
            ("variables_block", &variables_block),
            ("grammar", GRAMMAR_EBNF.trim_end()),
            ("history_section", &history_section),
            ("insight_section", &insight_section),
            ("ideas_section", &ideas_section),
        ],
    )
}

/// Pull the candidate expression text out of a model completion.
///
/// Rule: the first fenced code block if present, else the first line that
/// could start an expression. In both cases a leading `name =` assignment
/// prefix is stripped. Returns `None` when nothing expression-like exists.
pub fn extract_expression_text(completion: &str) -> Option<String> {
    if let Some(block) = first_fenced_block(completion) {
        let line = block.lines().find(|l| !l.trim().is_empty())?;
        return Some(strip_assignment_prefix(line.trim()).to_string());
    }
    for line in completion.lines() {
        let trimmed = line.trim();
        let Some(first) = trimmed.chars().next() else { continue };
        if first.is_ascii_digit()
            || first.is_ascii_alphabetic()
            || first == '('
            || first == '-'
            || first == '_'
        {
            return Some(strip_assignment_prefix(trimmed).to_string());
        }
    }
    None
}

fn first_fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let rest = &text[open + 3..];
    let close = rest.find("```")?;
    let block = &rest[..close];
    // drop a language tag attached to the opening fence ("```python\n...")
    match block.split_once('\n') {
        Some((head, body))
            if !head.is_empty() && head.chars().all(|c| c.is_ascii_alphanumeric()) =>
        {
            Some(body)
        }
        _ => Some(block),
    }
}

/// Strip a leading `<name> =` where `<name>` looks like an identifier or a
/// derivative spelling (`dv/dt`), not part of the expression itself.
fn strip_assignment_prefix(line: &str) -> &str {
    let Some(eq) = line.find('=') else { return line };
    let lhs = line[..eq].trim();
    if !lhs.is_empty()
        && lhs.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '/' || c == '.')
    {
        line[eq + 1..].trim()
    } else {
        line
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, DatasetMeta, SplitIndices, Variable};
    use crate::engine::BufferEntry;
    use crate::expr::InputMatrix;
    use crate::templates::PromptTemplates;

    fn toy_dataset() -> Dataset {
        let meta = DatasetMeta {
            name: "toy".into(),
            benchmark: None,
            variables: vec![Variable::new("x", "m", "displacement")],
            target_name: "y".into(),
            seed: None,
            noise_sigma: 0.0,
            default_tau: 0.1,
            splits: SplitIndices { train: vec![0, 1], ..Default::default() },
        };
        Dataset::new(meta, InputMatrix::new(2, 1, vec![0.0, 1.0]), vec![0.0, 2.0]).unwrap()
    }

    fn insight_v0() -> Insight {
        Insight {
            content: "monotone in x".into(),
            iteration: 0,
            trigger_score: None,
            version: 0,
            source_view_seed: 0,
        }
    }

    #[test]
    fn empty_buffer_prompt_has_task_grammar_insight_only() {
        let data = toy_dataset();
        let buffer = ExperienceBuffer::new(8);
        let insight = insight_v0();
        let prompt = build_prompt(
            &PromptInputs {
                data: &data,
                buffer: &buffer,
                insight: &insight,
                sampled_ideas: &[],
                k: 3,
                include_insight: true,
            },
            &PromptTemplates::default(),
        );
        assert!(prompt.contains("\"toy\""));
        assert!(prompt.contains("expression = term"), "grammar not quoted");
        assert!(prompt.contains(INSIGHT_HEADER));
        assert!(prompt.contains("monotone in x"));
        assert!(!prompt.contains(HISTORY_HEADER));
        assert!(!prompt.contains(IDEAS_HEADER));
    }

    #[test]
    fn insight_section_respects_the_draw() {
        let data = toy_dataset();
        let buffer = ExperienceBuffer::new(8);
        let insight = insight_v0();
        let prompt = build_prompt(
            &PromptInputs {
                data: &data,
                buffer: &buffer,
                insight: &insight,
                sampled_ideas: &[],
                k: 3,
                include_insight: false,
            },
            &PromptTemplates::default(),
        );
        assert!(!prompt.contains(INSIGHT_HEADER));
        assert!(!prompt.contains("monotone in x"));
    }

    #[test]
    fn top_k_buffer_entries_appear_worst_to_best() {
        let data = toy_dataset();
        let mut buffer = ExperienceBuffer::new(8);
        for (i, score) in [-5.0, -1.0, -3.0, -2.0, -4.0].iter().enumerate() {
            buffer.insert(BufferEntry {
                expression: format!("(params[0] * x) + {i}"),
                params: vec![1.0],
                score: *score,
            });
        }
        let prompt = build_prompt(
            &PromptInputs {
                data: &data,
                buffer: &buffer,
                insight: &insight_v0(),
                sampled_ideas: &[],
                k: 3,
                include_insight: true,
            },
            &PromptTemplates::default(),
        );
        // exactly the top three scores, ascending so the best is last
        let p3 = prompt.find("score=-3").expect("third best present");
        let p2 = prompt.find("score=-2").expect("second best present");
        let p1 = prompt.find("score=-1").expect("best present");
        assert!(p3 < p2 && p2 < p1, "not ascending");
        assert!(!prompt.contains("score=-4"));
        assert!(!prompt.contains("score=-5"));
    }

    #[test]
    fn fenced_block_wins() {
        let text = "Sure! Here is my candidate:\n```\nparams[0]*sin(x)\n```\nHope it helps.";
        assert_eq!(extract_expression_text(text).unwrap(), "params[0]*sin(x)");
    }

    #[test]
    fn fenced_block_language_tag_is_dropped() {
        let text = "```python\nparams[0]*x + params[1]\n```";
        assert_eq!(extract_expression_text(text).unwrap(), "params[0]*x + params[1]");
    }

    #[test]
    fn assignment_prefix_is_stripped() {
        assert_eq!(extract_expression_text("v_dot = params[0]*x").unwrap(), "params[0]*x");
        assert_eq!(extract_expression_text("dv/dt = -x").unwrap(), "-x");
        let fenced = "```\ny = params[0]*exp(x)\n```";
        assert_eq!(extract_expression_text(fenced).unwrap(), "params[0]*exp(x)");
    }

    #[test]
    fn bare_first_line_is_used() {
        assert_eq!(extract_expression_text("params[0]*x - 1\nmore prose").unwrap(), "params[0]*x - 1");
        assert_eq!(extract_expression_text("(x + 1)/2").unwrap(), "(x + 1)/2");
    }

    #[test]
    fn nothing_expression_like() {
        assert_eq!(extract_expression_text(""), None);
        assert_eq!(extract_expression_text("   \n\t\n"), None);
    }

    #[test]
    fn comparison_operators_are_not_assignments() {
        // `==` has an identifier lhs trimmed to `x`, but the rhs starts with
        // `=` and will fail to parse; the simpler `a = b = c` keeps one strip
        assert_eq!(extract_expression_text("x == 1").unwrap(), "= 1");
        assert_eq!(extract_expression_text("params[0] - 1 = x").unwrap(), "params[0] - 1 = x");
    }
}
