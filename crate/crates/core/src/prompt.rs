//! Prompt templates and the textual rendering of narrative, state and task.
//!
//! Templates use `{{name}}` placeholders. Defaults are compiled in from the
//! `prompts/` directory of this crate; callers may override any of them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::state::{NarrativeUnit, Obstacle, QueryItem, ReasoningState, Task, Verdict};

pub const EXTRACT_STRUCTURE: &str = "extract_structure";
pub const ALIGN: &str = "align";
pub const VERIFY: &str = "verify";
pub const AWARE: &str = "aware";
pub const DECOMPOSE: &str = "decompose";
pub const HYPOTHESIZE: &str = "hypothesize";
pub const SYNTHESIZE: &str = "synthesize";
pub const DIRECT: &str = "direct";
pub const COT: &str = "cot";
pub const PROPOSITIONS: &str = "propositions";

pub const TEMPLATE_NAMES: [&str; 10] = [
    EXTRACT_STRUCTURE,
    ALIGN,
    VERIFY,
    AWARE,
    DECOMPOSE,
    HYPOTHESIZE,
    SYNTHESIZE,
    DIRECT,
    COT,
    PROPOSITIONS,
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("no template named {0}")]
    Unknown(String),
    #[error("template {template} leaves placeholder {{{{{placeholder}}}}} unresolved")]
    Unresolved {
        template: String,
        placeholder: String,
    },
    #[error("template {0} has an unterminated placeholder")]
    Unterminated(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    bodies: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let defaults = [
            (
                EXTRACT_STRUCTURE,
                include_str!("../prompts/extract_structure.txt"),
            ),
            (ALIGN, include_str!("../prompts/align.txt")),
            (VERIFY, include_str!("../prompts/verify.txt")),
            (AWARE, include_str!("../prompts/aware.txt")),
            (DECOMPOSE, include_str!("../prompts/decompose.txt")),
            (HYPOTHESIZE, include_str!("../prompts/hypothesize.txt")),
            (SYNTHESIZE, include_str!("../prompts/synthesize.txt")),
            (DIRECT, include_str!("../prompts/direct.txt")),
            (COT, include_str!("../prompts/cot.txt")),
            (PROPOSITIONS, include_str!("../prompts/propositions.txt")),
        ];
        Self {
            bodies: defaults
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl PromptTemplates {
    pub fn set(&mut self, name: &str, body: impl Into<String>) {
        self.bodies.insert(name.to_string(), body.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.bodies.get(name).map(String::as_str)
    }

    /// Substitutes `{{key}}` occurrences. Unknown keys are an error, so a
    /// rendered prompt never carries a stray placeholder.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let body = self
            .bodies
            .get(name)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))?;
        let mut out = String::with_capacity(body.len());
        let mut rest = body.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or_else(|| TemplateError::Unterminated(name.to_string()))?;
            let key = after[..close].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::Unresolved {
                    template: name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(value);
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub fn render_narrative(units: &[NarrativeUnit]) -> String {
    let mut out = String::new();
    for u in units {
        let _ = writeln!(out, "[{}] {}", u.id, u.text.trim());
    }
    out
}

pub fn render_task(task: &Task) -> String {
    let dims: Vec<&str> = task.dimensions.iter().map(|d| d.label()).collect();
    format!(
        "{}\nDimensions to answer: {}",
        task.instruction.trim(),
        dims.join(", ")
    )
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Consistent => "consistent",
        Verdict::Conflict => "CONFLICT",
        Verdict::Doubt => "DOUBT",
    }
}

/// Deterministic text view of a reasoning state.
pub fn render_state(state: &ReasoningState) -> String {
    let mut out = String::from("Baseline evidence:\n");
    for pair in &state.baseline.pairs {
        let _ = writeln!(
            out,
            "[{}] {}",
            pair.unit.event.id,
            pair.unit.event.description.trim()
        );
        for a in &pair.unit.attributes {
            let _ = writeln!(out, "    - [{}] {}", a.id, a.description.trim());
        }
        let c = &pair.comment;
        if c.note.trim().is_empty() {
            let _ = writeln!(out, "    check: {}", verdict_label(c.verdict));
        } else {
            let _ = writeln!(
                out,
                "    check: {} ({})",
                verdict_label(c.verdict),
                c.note.trim()
            );
        }
    }
    if !state.queries.is_empty() {
        out.push_str("Queries:\n");
        for q in &state.queries {
            let _ = writeln!(
                out,
                "[{}] (round {}, for {}) {}",
                q.id,
                q.round,
                q.obstacle_id,
                q.question.trim()
            );
        }
    }
    if !state.hypotheses.is_empty() {
        out.push_str("Hypotheses:\n");
        for h in &state.hypotheses {
            let _ = write!(
                out,
                "[{}] (round {}, answers {}, {:?}",
                h.id, h.round, h.query_id, h.support_status
            );
            if let Some(prev) = &h.supersedes {
                let _ = write!(out, ", revises {prev}");
            }
            let _ = writeln!(out, ") {}", h.statement.trim());
        }
    }
    out
}

pub fn render_obstacle(o: &Obstacle) -> String {
    let ty: String = o.obstacle_type.clone().into();
    format!(
        "[{}] type={} dimension={} requirement: {}",
        o.id,
        ty,
        o.blocked_dimension,
        o.requirement.trim()
    )
}

pub fn render_query(q: &QueryItem) -> String {
    format!("[{}] {}", q.id, q.question.trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders() {
        let mut t = PromptTemplates::default();
        t.set("x", "Hello {{ name }}, {{name}}!");
        assert_eq!(
            t.render("x", &[("name", "Ann")]).unwrap(),
            "Hello Ann, Ann!"
        );
    }

    #[test]
    fn unresolved_placeholder_is_an_error() {
        let mut t = PromptTemplates::default();
        t.set("x", "{{a}} {{b}}");
        assert!(matches!(
            t.render("x", &[("a", "1")]),
            Err(TemplateError::Unresolved { .. })
        ));
        t.set("y", "{{a");
        assert!(matches!(
            t.render("y", &[("a", "1")]),
            Err(TemplateError::Unterminated(_))
        ));
        assert!(matches!(
            t.render("zzz", &[]),
            Err(TemplateError::Unknown(_))
        ));
    }

    #[test]
    fn defaults_exist_for_every_name() {
        let t = PromptTemplates::default();
        for name in TEMPLATE_NAMES {
            assert!(t.get(name).is_some_and(|b| !b.trim().is_empty()), "{name}");
        }
    }
}
