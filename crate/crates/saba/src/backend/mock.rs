//! Deterministic scripted provider.
//!
//! Replies are looked up by `(case_id, kind, round, item)`. Any of case,
//! round and item may be left out of an entry to act as a wildcard; the most
//! specific matching entry wins. A request with no matching entry fails with
//! [`BackendError::MissingFixture`] naming the full key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use saba_core::model::{BackendError, Completion, LanguageModel, ModelRequest, PromptKind, Usage};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const FIXTURE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    /// Reply for every attempt. Strings are sent verbatim, anything else as
    /// compact JSON.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    /// Per-attempt replies; the last one repeats. Takes precedence over
    /// `response`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub schema_version: u32,
    #[serde(default = "default_model")]
    pub model: String,
    pub entries: Vec<FixtureEntry>,
}

fn default_model() -> String {
    "mock".into()
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("fixture file {path}: {reason}")]
    Invalid { path: String, reason: String },
}

type Key = (Option<String>, PromptKind, Option<u32>, Option<String>);

#[derive(Debug, Clone)]
struct Script {
    replies: Vec<String>,
    usage: Option<Usage>,
}

#[derive(Debug, Clone)]
pub struct MockModel {
    name: String,
    scripts: BTreeMap<Key, Script>,
}

fn reply_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl MockModel {
    pub fn from_fixture(file: FixtureFile) -> Result<Self, String> {
        if file.schema_version != FIXTURE_SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {}",
                file.schema_version
            ));
        }
        let mut scripts = BTreeMap::new();
        for (i, e) in file.entries.into_iter().enumerate() {
            let replies: Vec<String> = if !e.responses.is_empty() {
                e.responses.iter().map(reply_text).collect()
            } else if let Some(r) = &e.response {
                vec![reply_text(r)]
            } else {
                return Err(format!("entries[{i}] has neither response nor responses"));
            };
            let key = (e.case_id, e.kind, e.round, e.item);
            if scripts.contains_key(&key) {
                return Err(format!("entries[{i}] duplicates key {key:?}"));
            }
            scripts.insert(
                key,
                Script {
                    replies,
                    usage: e.usage,
                },
            );
        }
        Ok(Self {
            name: file.model,
            scripts,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: shown.clone(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let file: FixtureFile =
            serde_path_to_error::deserialize(de).map_err(|e| FixtureError::Invalid {
                path: shown.clone(),
                reason: format!("{}: {}", e.path(), e.inner()),
            })?;
        Self::from_fixture(file).map_err(|reason| FixtureError::Invalid {
            path: shown,
            reason,
        })
    }

    /// Adds the entries of `other`; keys already present are an error.
    pub fn merge(&mut self, other: MockModel) -> Result<(), String> {
        for (k, v) in other.scripts {
            if self.scripts.contains_key(&k) {
                return Err(format!("duplicate fixture key {k:?}"));
            }
            self.scripts.insert(k, v);
        }
        Ok(())
    }

    fn lookup(&self, r: &ModelRequest) -> Option<&Script> {
        let case = Some(r.case_id.clone());
        let round = Some(r.round);
        for c in [&case, &None] {
            for rd in [round, None] {
                for it in [&r.item, &None] {
                    if let Some(s) = self.scripts.get(&(c.clone(), r.kind, rd, it.clone())) {
                        return Some(s);
                    }
                }
            }
        }
        None
    }
}

impl LanguageModel for MockModel {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, r: &ModelRequest) -> Result<Completion, BackendError> {
        let script = self.lookup(r).ok_or_else(|| {
            BackendError::MissingFixture(format!(
                "case_id={} kind={} round={} item={}",
                r.case_id,
                r.kind,
                r.round,
                r.item.as_deref().unwrap_or("-")
            ))
        })?;
        let i = (r.attempt as usize).min(script.replies.len() - 1);
        Ok(Completion {
            text: script.replies[i].clone(),
            usage: script.usage,
            latency_ms: 0,
        })
    }
}
