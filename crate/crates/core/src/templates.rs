//! Prompt templates with named `{placeholder}` slots.
//!
//! Default templates are embedded from `prompts/`; a run config may point at
//! a directory of replacements so prompt wording stays user-visible and
//! versioned alongside results. Rendering is plain string substitution —
//! unknown placeholders are left untouched so a template typo is visible in
//! the prompt log rather than silently dropped.

use std::path::Path;

pub const MAIN_SYSTEM_PROMPT: &str = "You are an expert at proposing concise, physically plausible closed-form equations for tabular data. You answer with exactly one expression in the requested grammar.";
pub const DATA_SYSTEM_PROMPT: &str = "You are a careful data analyst. You describe structure in data precisely and concisely.";
pub const IDEA_SYSTEM_PROMPT: &str = "You distill lessons from equation-discovery attempts into short, reusable strategies.";

/// The template set used by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub main: String,
    pub insight_initial: String,
    pub insight_refine: String,
    pub insight_requirements: String,
    pub idea_positive: String,
    pub idea_negative: String,
    pub idea_invalid: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            main: include_str!("../prompts/main.txt").to_string(),
            insight_initial: include_str!("../prompts/insight_initial.txt").to_string(),
            insight_refine: include_str!("../prompts/insight_refine.txt").to_string(),
            insight_requirements: include_str!("../prompts/insight_requirements.txt").to_string(),
            idea_positive: include_str!("../prompts/idea_positive.txt").to_string(),
            idea_negative: include_str!("../prompts/idea_negative.txt").to_string(),
            idea_invalid: include_str!("../prompts/idea_invalid.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load templates from a directory holding `main.txt`,
    /// `insight_initial.txt`, `insight_refine.txt`, `insight_requirements.txt`,
    /// `idea_positive.txt`, `idea_negative.txt`, `idea_invalid.txt`.
    /// Missing files fall back to the embedded defaults.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = PromptTemplates::default();
        let read = |name: &str, slot: &mut String| -> std::io::Result<()> {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
            Ok(())
        };
        read("main.txt", &mut t.main)?;
        read("insight_initial.txt", &mut t.insight_initial)?;
        read("insight_refine.txt", &mut t.insight_refine)?;
        read("insight_requirements.txt", &mut t.insight_requirements)?;
        read("idea_positive.txt", &mut t.idea_positive)?;
        read("idea_negative.txt", &mut t.idea_negative)?;
        read("idea_invalid.txt", &mut t.idea_invalid)?;
        Ok(t)
    }

    /// Write the current templates into a directory (used to seed an editable
    /// prompt set next to a run).
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("main.txt"), &self.main)?;
        std::fs::write(dir.join("insight_initial.txt"), &self.insight_initial)?;
        std::fs::write(dir.join("insight_refine.txt"), &self.insight_refine)?;
        std::fs::write(dir.join("insight_requirements.txt"), &self.insight_requirements)?;
        std::fs::write(dir.join("idea_positive.txt"), &self.idea_positive)?;
        std::fs::write(dir.join("idea_negative.txt"), &self.idea_negative)?;
        std::fs::write(dir.join("idea_invalid.txt"), &self.idea_invalid)?;
        Ok(())
    }
}

/// Substitute `{name}` slots. Unknown slots are left as-is.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Format a value with six significant digits, decimal where practical.
/// Deterministic: prompts containing numbers must be byte-stable.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.000000".to_string();
    }
    let a = v.abs();
    if !(1e-4..1e7).contains(&a) {
        return format!("{v:.5e}");
    }
    let digits_before = a.log10().floor() as i32 + 1;
    let decimals = (6 - digits_before).max(0) as usize;
    format!("{v:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_and_preserves_unknown() {
        let out = render("a={a} b={b} keep={unknown}", &[("a", "1"), ("b", "2")]);
        assert_eq!(out, "a=1 b=2 keep={unknown}");
    }

    #[test]
    fn defaults_have_expected_slots() {
        let t = PromptTemplates::default();
        for slot in ["{dataset_name}", "{target_name}", "{variables_block}", "{grammar}"] {
            assert!(t.main.contains(slot), "main.txt missing {slot}");
        }
        assert!(t.insight_initial.contains("{rows_table}"));
        assert!(t.insight_refine.contains("{best_equation}"));
        assert!(t.insight_refine.contains("{previous_insight}"));
        assert!(t.idea_invalid.contains("{error}"));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0.000000");
        assert_eq!(fmt_sig6(1.0), "1.00000");
        assert_eq!(fmt_sig6(-123.456789), "-123.457");
        assert_eq!(fmt_sig6(123456.789), "123457");
        assert_eq!(fmt_sig6(0.000123456), "0.000123456");
        assert_eq!(fmt_sig6(1e-7), "1.00000e-7");
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = PromptTemplates::default();
        t.write_dir(dir.path()).unwrap();
        let back = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(t, back);
    }
}
