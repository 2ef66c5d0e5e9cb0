//! Benchmark instances and their gold annotations.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::state::{validate_narrative, NarrativeUnit, Task, TaskDimension};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Difficulty {
    Easy,
    Medium,
    Complex,
    #[default]
    NA,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Self::Easy, Self::Medium, Self::Complex, Self::NA];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suspect {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

/// Gold annotations. Reference propositions ship already decomposed, one
/// claim per entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Gold {
    #[serde(rename = "dp")]
    Detective {
        suspect: Suspect,
        motive: Vec<String>,
        modus: Vec<String>,
        critical_clues: Vec<String>,
    },
    Qa {
        answers: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        support: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct CaseError {
    pub field: String,
    pub reason: String,
}

impl CaseError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: String,
    #[serde(default)]
    pub difficulty: Difficulty,
    pub narrative: Vec<NarrativeUnit>,
    pub task: Task,
    pub gold: Gold,
}

fn non_blank_list(field: &str, items: &[String], allow_empty: bool) -> Result<(), CaseError> {
    if !allow_empty && items.is_empty() {
        return Err(CaseError::new(field, "must not be empty"));
    }
    if let Some(i) = items.iter().position(|s| s.trim().is_empty()) {
        return Err(CaseError::new(format!("{field}[{i}]"), "blank entry"));
    }
    Ok(())
}

impl CaseSpec {
    pub fn is_detective(&self) -> bool {
        matches!(self.gold, Gold::Detective { .. })
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        if self.case_id.trim().is_empty() {
            return Err(CaseError::new("case_id", "must not be blank"));
        }
        if self.narrative.is_empty() {
            return Err(CaseError::new("narrative", "must not be empty"));
        }
        validate_narrative(&self.narrative)
            .map_err(|e| CaseError::new("narrative", e.to_string()))?;
        self.task
            .validate()
            .map_err(|e| CaseError::new("task", e.to_string()))?;
        match &self.gold {
            Gold::Detective {
                suspect,
                motive,
                modus,
                critical_clues,
            } => {
                if suspect.name.trim().is_empty() {
                    return Err(CaseError::new("gold.suspect.name", "must not be blank"));
                }
                non_blank_list("gold.suspect.aliases", &suspect.aliases, true)?;
                non_blank_list("gold.motive", motive, false)?;
                non_blank_list("gold.modus", modus, false)?;
                non_blank_list("gold.critical_clues", critical_clues, false)?;
                for dim in [
                    TaskDimension::Suspect,
                    TaskDimension::Motive,
                    TaskDimension::ModusOperandi,
                ] {
                    if !self.task.declares(&dim) {
                        return Err(CaseError::new(
                            "task.dimensions",
                            format!("detective case must declare {dim}"),
                        ));
                    }
                }
            }
            Gold::Qa { answers, support } => {
                non_blank_list("gold.answers", answers, false)?;
                non_blank_list("gold.support", support, true)?;
                if !self.task.declares(&TaskDimension::Answer) {
                    return Err(CaseError::new(
                        "task.dimensions",
                        "QA case must declare Answer",
                    ));
                }
                let unique: BTreeSet<&String> = support.iter().collect();
                if unique.len() != support.len() {
                    return Err(CaseError::new(
                        "gold.support",
                        "duplicate supporting-fact id",
                    ));
                }
            }
        }
        Ok(())
    }
}
