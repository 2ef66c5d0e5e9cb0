//! Case files, corpus manifests and adapters for external QA datasets.
//!
//! A corpus is a directory holding `corpus.json` (the manifest) and one JSON
//! file per case. Both carry a `schema_version`. Canonical form is
//! pretty-printed JSON with a trailing newline, which is what [`save_case`]
//! and [`save_manifest`] write.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use saba_core::case::{CaseSpec, Difficulty, Gold};
use saba_core::state::{ItemId, NarrativeUnit, Task, TaskDimension};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const CASE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "corpus.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: field `{field}`: {reason}")]
    Invalid {
        path: String,
        field: String,
        reason: String,
    },
    #[error("duplicate case_id {case_id} in {first} and {second}")]
    Duplicate {
        case_id: String,
        first: String,
        second: String,
    },
}

impl DatasetError {
    fn invalid(path: &Path, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.display().to_string(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    Dp,
    Qa,
    ChoiceAccuracy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub name: String,
    pub mode: CorpusMode,
    /// Case file paths relative to the manifest.
    pub cases: Vec<String>,
    /// Declared number of cases per difficulty; omitted tiers mean zero.
    #[serde(default)]
    pub counts: BTreeMap<Difficulty, usize>,
}

#[derive(Serialize)]
struct CaseFileOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    case: &'a CaseSpec,
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `text`, creating missing parent directories.
fn write(path: &Path, text: &str) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

fn deserialize_at<T: DeserializeOwned>(path: &Path, value: Value) -> Result<T, DatasetError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        DatasetError::invalid(path, field, e.into_inner().to_string())
    })
}

fn check_version(path: &Path, value: &mut Value, expected: u32) -> Result<(), DatasetError> {
    let obj = value
        .as_object_mut()
        .ok_or_else(|| DatasetError::invalid(path, ".", "expected a JSON object"))?;
    match obj.remove("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(expected) => Ok(()),
        Some(v) => Err(DatasetError::invalid(
            path,
            "schema_version",
            format!("unsupported version {v}"),
        )),
        None => Err(DatasetError::invalid(
            path,
            "schema_version",
            "missing or not an integer",
        )),
    }
}

fn parse_json(path: &Path, text: &str) -> Result<Value, DatasetError> {
    serde_json::from_str(text)
        .map_err(|e| DatasetError::invalid(path, ".", format!("invalid JSON: {e}")))
}

pub fn load_case(path: &Path) -> Result<CaseSpec, DatasetError> {
    let mut value = parse_json(path, &read(path)?)?;
    check_version(path, &mut value, CASE_SCHEMA_VERSION)?;
    let case: CaseSpec = deserialize_at(path, value)?;
    case.validate()
        .map_err(|e| DatasetError::invalid(path, e.field, e.reason))?;
    Ok(case)
}

pub fn case_to_string(case: &CaseSpec) -> String {
    let out = CaseFileOut {
        schema_version: CASE_SCHEMA_VERSION,
        case,
    };
    let mut text = serde_json::to_string_pretty(&out).expect("case serializes");
    text.push('\n');
    text
}

pub fn save_case(path: &Path, case: &CaseSpec) -> Result<(), DatasetError> {
    write(path, &case_to_string(case))
}

pub fn manifest_to_string(manifest: &CorpusManifest) -> String {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    text
}

pub fn save_manifest(path: &Path, manifest: &CorpusManifest) -> Result<(), DatasetError> {
    write(path, &manifest_to_string(manifest))
}

/// Accepts the manifest file itself or the directory containing it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, DatasetError> {
    let path = manifest_path(path);
    let value = parse_json(&path, &read(&path)?)?;
    let manifest: CorpusManifest = deserialize_at(&path, value)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DatasetError::invalid(
            &path,
            "schema_version",
            format!("unsupported version {}", manifest.schema_version),
        ));
    }
    if manifest.name.trim().is_empty() {
        return Err(DatasetError::invalid(&path, "name", "must not be blank"));
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub root: PathBuf,
    /// In manifest order.
    pub cases: Vec<CaseSpec>,
}

impl Corpus {
    pub fn case(&self, case_id: &str) -> Option<&CaseSpec> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn tally(&self) -> BTreeMap<Difficulty, usize> {
        let mut out = BTreeMap::new();
        for c in &self.cases {
            *out.entry(c.difficulty).or_insert(0) += 1;
        }
        out
    }
}

/// Loads and validates a whole corpus: every case file, mode agreement,
/// unique ids and the declared per-difficulty counts.
pub fn load_corpus(path: &Path) -> Result<Corpus, DatasetError> {
    let mpath = manifest_path(path);
    let manifest = load_manifest(&mpath)?;
    let root = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cases = Vec::with_capacity(manifest.cases.len());
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for (i, rel) in manifest.cases.iter().enumerate() {
        let cpath = root.join(rel);
        if !cpath.is_file() {
            return Err(DatasetError::invalid(
                &mpath,
                format!("cases[{i}]"),
                format!("{rel} does not exist"),
            ));
        }
        let case = load_case(&cpath)?;
        let mode_ok = matches!(
            (&case.gold, manifest.mode),
            (Gold::Detective { .. }, CorpusMode::Dp)
                | (Gold::Qa { .. }, CorpusMode::Qa | CorpusMode::ChoiceAccuracy)
        );
        if !mode_ok {
            return Err(DatasetError::invalid(
                &cpath,
                "gold.mode",
                format!("does not match corpus mode {:?}", manifest.mode),
            ));
        }
        if let Some(first) = seen.insert(case.case_id.clone(), rel.clone()) {
            return Err(DatasetError::Duplicate {
                case_id: case.case_id,
                first,
                second: rel.clone(),
            });
        }
        cases.push(case);
    }
    let corpus = Corpus {
        manifest,
        root,
        cases,
    };
    let found = corpus.tally();
    for d in Difficulty::ALL {
        let declared = corpus.manifest.counts.get(&d).copied().unwrap_or(0);
        let actual = found.get(&d).copied().unwrap_or(0);
        if declared != actual {
            return Err(DatasetError::invalid(
                &mpath,
                format!("counts.{d:?}"),
                format!("declares {declared} case(s) but {actual} are present"),
            ));
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot adapt QA record: {0}")]
pub struct AdapterError(pub String);

fn str_field<'a>(record: &'a Value, names: &[&str]) -> Option<&'a str> {
    names
        .iter()
        .find_map(|n| record.get(*n).and_then(Value::as_str))
        .filter(|s| !s.trim().is_empty())
}

fn qa_task(question: &str) -> Task {
    Task {
        dimensions: vec![TaskDimension::Answer],
        instruction: question.to_string(),
    }
}

fn unit(i: usize, prefix: &str, text: String) -> NarrativeUnit {
    NarrativeUnit {
        id: ItemId::new(format!("{prefix}{i}")),
        text,
        ordinal: i,
    }
}

/// Maps one external multi-hop QA record onto a case.
///
/// * HotpotQA-style (`context: [[title, [sentences]]]`): one unit per passage,
///   each sentence tagged `[Title#k]`; `supporting_facts: [[title, k]]`
///   become gold support ids `Title#k`.
/// * StrategyQA-style (`facts: [..]`, boolean `answer`): one unit per fact,
///   answer `yes`/`no`.
/// * Anything else with `input`/`question` and `target`/`answer`: the input
///   is the single unit (multiple-choice accuracy sets).
pub fn adapt_qa(record: &Value, fallback_id: &str) -> Result<CaseSpec, AdapterError> {
    let question = str_field(record, &["question", "input"])
        .ok_or_else(|| AdapterError("missing question".into()))?;
    let case_id = str_field(record, &["_id", "qid", "id"])
        .unwrap_or(fallback_id)
        .to_string();

    let answer = match record.get("answer").or_else(|| record.get("target")) {
        Some(Value::Bool(b)) => if *b { "yes" } else { "no" }.to_string(),
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(AdapterError("missing answer".into())),
    };

    let mut support = Vec::new();
    let narrative = if let Some(ctx) = record.get("context").and_then(Value::as_array) {
        let mut units = Vec::new();
        for (i, passage) in ctx.iter().enumerate() {
            let title = passage
                .get(0)
                .and_then(Value::as_str)
                .ok_or_else(|| AdapterError(format!("context[{i}] has no title")))?;
            let sentences = passage
                .get(1)
                .and_then(Value::as_array)
                .ok_or_else(|| AdapterError(format!("context[{i}] has no sentence list")))?;
            let body: Vec<String> = sentences
                .iter()
                .enumerate()
                .filter_map(|(k, s)| s.as_str().map(|s| format!("[{title}#{k}] {}", s.trim())))
                .collect();
            units.push(unit(i, "p", format!("{title}: {}", body.join(" "))));
        }
        if let Some(facts) = record.get("supporting_facts").and_then(Value::as_array) {
            for f in facts {
                match (
                    f.get(0).and_then(Value::as_str),
                    f.get(1).and_then(Value::as_u64),
                ) {
                    (Some(t), Some(k)) => support.push(format!("{t}#{k}")),
                    _ => return Err(AdapterError(format!("malformed supporting fact {f}"))),
                }
            }
        }
        units
    } else if let Some(facts) = record.get("facts").and_then(Value::as_array) {
        facts
            .iter()
            .filter_map(Value::as_str)
            .enumerate()
            .map(|(i, f)| unit(i, "f", f.to_string()))
            .collect()
    } else {
        vec![unit(0, "u", question.to_string())]
    };
    if narrative.is_empty() {
        return Err(AdapterError("record has no context".into()));
    }
    let mut seen = BTreeSet::new();
    support.retain(|s| seen.insert(s.clone()));

    let case = CaseSpec {
        case_id,
        difficulty: Difficulty::NA,
        narrative,
        task: qa_task(question),
        gold: Gold::Qa {
            answers: vec![answer],
            support,
        },
    };
    case.validate().map_err(|e| AdapterError(e.to_string()))?;
    Ok(case)
}
