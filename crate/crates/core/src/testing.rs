//! Test-only helpers: a model scripted by (kind, round, item) and a small
//! detective case.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use std::sync::Mutex;

use serde_json::Value;

use crate::case::{CaseSpec, Difficulty, Gold, Suspect};
use crate::model::{BackendError, Completion, LanguageModel, ModelRequest, PromptKind};
use crate::state::{ItemId, NarrativeUnit, Task, TaskDimension};

type Key = (PromptKind, Option<u32>, Option<String>);

/// Replies keyed by kind, round (`None` = any) and item (`None` = any).
#[derive(Default)]
pub struct ScriptModel {
    replies: BTreeMap<Key, Vec<String>>,
    pub log: Mutex<Vec<ModelRequest>>,
}

impl ScriptModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// `round < 0` matches any round.
    pub fn set(&mut self, kind: PromptKind, round: i64, item: Option<&str>, reply: Value) {
        self.set_raw(kind, round, item, alloc::vec![reply.to_string()]);
    }

    /// One reply per attempt; the last one repeats.
    pub fn set_raw(
        &mut self,
        kind: PromptKind,
        round: i64,
        item: Option<&str>,
        replies: Vec<String>,
    ) {
        let round = u32::try_from(round).ok();
        self.replies
            .insert((kind, round, item.map(String::from)), replies);
    }

    pub fn requests(&self) -> Vec<ModelRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl LanguageModel for ScriptModel {
    fn model_name(&self) -> &str {
        "script"
    }

    fn complete(&self, r: &ModelRequest) -> Result<Completion, BackendError> {
        self.log.lock().unwrap().push(r.clone());
        let candidates = [
            (r.kind, Some(r.round), r.item.clone()),
            (r.kind, Some(r.round), None),
            (r.kind, None, r.item.clone()),
            (r.kind, None, None),
        ];
        let replies = candidates
            .iter()
            .find_map(|k| self.replies.get(k))
            .ok_or_else(|| {
                BackendError::MissingFixture(format!("{}/{}/{:?}", r.kind, r.round, r.item))
            })?;
        let i = (r.attempt as usize).min(replies.len() - 1);
        Ok(Completion {
            text: replies[i].clone(),
            usage: None,
            latency_ms: 0,
        })
    }
}

pub fn narrative(n: usize) -> Vec<NarrativeUnit> {
    (0..n)
        .map(|i| NarrativeUnit {
            id: ItemId::new(format!("u{i}")),
            text: format!("Sentence number {i} of the story."),
            ordinal: i,
        })
        .collect()
}

pub fn dp_case(n: usize) -> CaseSpec {
    CaseSpec {
        case_id: "fixture".to_string(),
        difficulty: Difficulty::Easy,
        narrative: narrative(n),
        task: Task {
            dimensions: alloc::vec![
                TaskDimension::Suspect,
                TaskDimension::Motive,
                TaskDimension::ModusOperandi
            ],
            instruction: "Who did it, why, and how?".to_string(),
        },
        gold: Gold::Detective {
            suspect: Suspect {
                name: "the host".to_string(),
                aliases: Vec::new(),
            },
            motive: alloc::vec!["The host owed money.".to_string()],
            modus: alloc::vec!["The host used poison.".to_string()],
            critical_clues: alloc::vec!["Poison was stored upstairs.".to_string()],
        },
    }
}
