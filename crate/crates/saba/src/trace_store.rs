//! Append-only run persistence.
//!
//! Layout: `<root>/<run_id>/trace.jsonl` and `<root>/<run_id>/result.json`.
//! The trace file starts with a header line, then one line per
//! [`TraceRecord`], and ends with an abort line if the run failed. Every line
//! is flushed and synced before the writer returns, so a crash leaves a
//! readable prefix. A trace without `result.json` reads back as aborted.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use saba_core::engine::{RunResult, TerminationReason, TraceSink};
use saba_core::state::{Conclusion, ReasoningState, RunConfig, TraceRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const TRACE_FILE: &str = "trace.jsonl";
pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("round {found} appended after round {last:?}; expected {expected}")]
    Sequencing {
        last: Option<u32>,
        expected: u32,
        found: u32,
    },
    #[error("{path}: line {line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("envelopes are not comparable: {0}")]
    Incomparable(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// sha256 over the canonical JSON of the configuration.
pub fn config_hash(config: &RunConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema_version: u32,
    pub run_id: String,
    pub case_id: String,
    /// Grouping label for reports, e.g. `mysteries-Complex`.
    pub split: String,
    /// 1-based repetition index within a batch.
    #[serde(default = "one")]
    pub run_index: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub started_at_ms: u64,
}

impl RunHeader {
    pub fn new(run_id: &str, case_id: &str, split: &str, config: &RunConfig) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            run_id: run_id.into(),
            case_id: case_id.into(),
            split: split.into(),
            run_index: 1,
            config: config.clone(),
            config_hash: config_hash(config),
            started_at_ms: now_ms(),
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortMarker {
    /// Stable error class, e.g. `fusion_parse`.
    pub class: String,
    pub reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(RunHeader),
    Record { record: TraceRecord },
    Abort(AbortMarker),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResultFile {
    schema_version: u32,
    run_id: String,
    case_id: String,
    finished_at_ms: u64,
    conclusion: Conclusion,
    termination_reason: TerminationReason,
    rounds_executed: u32,
    final_state: Option<ReasoningState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed { result: RunResult },
    Aborted(AbortMarker),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnvelope {
    pub header: RunHeader,
    pub finished_at_ms: Option<u64>,
    pub records: Vec<TraceRecord>,
    pub outcome: Outcome,
}

impl RunEnvelope {
    pub fn result(&self) -> Option<&RunResult> {
        match &self.outcome {
            Outcome::Completed { result } => Some(result),
            Outcome::Aborted(_) => None,
        }
    }
}

/// Single writer for one run directory. Implements [`TraceSink`].
pub struct TraceWriter {
    dir: PathBuf,
    file: File,
    header: RunHeader,
    last_round: Option<u32>,
    error: Option<StoreError>,
}

impl TraceWriter {
    /// Creates `<root>/<run_id>/`, replacing any earlier run with that id.
    pub fn create(root: &Path, header: RunHeader) -> Result<Self, StoreError> {
        let dir = root.join(&header.run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let result = dir.join(RESULT_FILE);
        if result.exists() {
            fs::remove_file(&result).map_err(io_err(&result))?;
        }
        let path = dir.join(TRACE_FILE);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = Self {
            dir,
            file,
            header: header.clone(),
            last_round: None,
            error: None,
        };
        w.write_line(&Line::Header(header))?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_line(&mut self, line: &Line) -> Result<(), StoreError> {
        let path = self.dir.join(TRACE_FILE);
        let mut text = serde_json::to_string(line).expect("trace line serializes");
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))
    }

    pub fn append(&mut self, record: &TraceRecord) -> Result<(), StoreError> {
        let expected = self.last_round.map_or(0, |r| r + 1);
        if record.round != expected {
            return Err(StoreError::Sequencing {
                last: self.last_round,
                expected,
                found: record.round,
            });
        }
        self.write_line(&Line::Record {
            record: record.clone(),
        })?;
        self.last_round = Some(record.round);
        Ok(())
    }

    /// The first storage failure seen through the [`TraceSink`] interface.
    pub fn take_error(&mut self) -> Option<StoreError> {
        self.error.take()
    }

    pub fn abort(mut self, class: &str, reason: &str) -> Result<(), StoreError> {
        self.write_line(&Line::Abort(AbortMarker {
            class: class.into(),
            reason: reason.into(),
        }))
    }

    pub fn finish(self, result: &RunResult) -> Result<(), StoreError> {
        let file = ResultFile {
            schema_version: TRACE_SCHEMA_VERSION,
            run_id: self.header.run_id.clone(),
            case_id: self.header.case_id.clone(),
            finished_at_ms: now_ms(),
            conclusion: result.conclusion.clone(),
            termination_reason: result.termination_reason,
            rounds_executed: result.rounds_executed,
            final_state: result.final_state.clone(),
        };
        let path = self.dir.join(RESULT_FILE);
        let tmp = self.dir.join("result.json.tmp");
        let mut text = serde_json::to_string_pretty(&file).expect("result serializes");
        text.push('\n');
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

impl TraceSink for TraceWriter {
    fn append(&mut self, record: &TraceRecord) -> Result<(), String> {
        TraceWriter::append(self, record).map_err(|e| {
            let msg = e.to_string();
            self.error.get_or_insert(e);
            msg
        })
    }
}

/// Appends extra bytes after the last complete line; used to simulate a
/// crash mid-write in tests.
pub fn append_raw(dir: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = OpenOptions::new().append(true).open(dir.join(TRACE_FILE))?;
    f.write_all(bytes)
}

/// Replays one run directory.
pub fn read_envelope(dir: &Path) -> Result<RunEnvelope, StoreError> {
    let path = dir.join(TRACE_FILE);
    let shown = path.display().to_string();
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut header = None;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut abort = None;
    let corrupt = |line: usize, reason: String| StoreError::Corrupt {
        path: shown.clone(),
        line,
        reason,
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(&path))?;
    let n = lines.len();
    for (i, text) in lines.into_iter().enumerate() {
        let lineno = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let line: Line = match serde_json::from_str(&text) {
            Ok(l) => l,
            // A torn final line is what a crash mid-append leaves behind.
            Err(e) if lineno == n && header.is_some() => {
                log::warn!("{shown}: ignoring torn final line: {e}");
                break;
            }
            Err(e) => return Err(corrupt(lineno, e.to_string())),
        };
        match line {
            Line::Header(h) if header.is_none() && lineno == 1 => header = Some(h),
            Line::Header(_) => return Err(corrupt(lineno, "unexpected header".into())),
            Line::Record { record } => {
                if header.is_none() {
                    return Err(corrupt(lineno, "record before header".into()));
                }
                let expected = records.last().map_or(0, |r| r.round + 1);
                if record.round != expected {
                    return Err(corrupt(
                        lineno,
                        format!("round {} where {expected} was expected", record.round),
                    ));
                }
                if let Some(f) = &record.fusion {
                    f.baseline
                        .validate()
                        .map_err(|e| corrupt(lineno, e.to_string()))?;
                }
                records.push(record);
            }
            Line::Abort(a) => abort = Some(a),
        }
    }
    let header = header.ok_or_else(|| corrupt(1, "missing header".into()))?;

    let rpath = dir.join(RESULT_FILE);
    let (outcome, finished_at_ms) = match (abort, rpath.exists()) {
        (Some(a), _) => (Outcome::Aborted(a), None),
        (None, false) => (
            Outcome::Aborted(AbortMarker {
                class: "incomplete".into(),
                reason: "trace has no result; the run did not finish".into(),
            }),
            None,
        ),
        (None, true) => {
            let text = fs::read_to_string(&rpath).map_err(io_err(&rpath))?;
            let rf: ResultFile = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                path: rpath.display().to_string(),
                line: e.line(),
                reason: e.to_string(),
            })?;
            if let Some(state) = &rf.final_state {
                state.validate().map_err(|e| StoreError::Corrupt {
                    path: rpath.display().to_string(),
                    line: 0,
                    reason: e.to_string(),
                })?;
            }
            let result = RunResult {
                conclusion: rf.conclusion,
                trace: records.clone(),
                termination_reason: rf.termination_reason,
                rounds_executed: rf.rounds_executed,
                final_state: rf.final_state,
            };
            (Outcome::Completed { result }, Some(rf.finished_at_ms))
        }
    };
    Ok(RunEnvelope {
        header,
        finished_at_ms,
        records,
        outcome,
    })
}

/// Every run directory under `root`, sorted by run id.
pub fn list_runs(root: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let p = entry.path();
        if p.join(TRACE_FILE).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_all(root: &Path) -> Result<Vec<RunEnvelope>, StoreError> {
    list_runs(root)?.iter().map(|d| read_envelope(d)).collect()
}

/// One differing leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub path: String,
    pub actual: Option<Value>,
    pub golden: Option<Value>,
}

const VOLATILE: &[&str] = &["latency_ms", "started_at_ms", "finished_at_ms", "run_id"];

fn strip_volatile(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in VOLATILE {
                map.remove(*k);
            }
            for child in map.values_mut() {
                strip_volatile(child);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

/// Arrays whose elements all carry an `id` (or a `round`) are matched by that
/// key, so the diff path names the item rather than its position.
fn element_key(v: &Value) -> Option<String> {
    let obj = v.as_object()?;
    if let Some(id) = obj.get("id").and_then(Value::as_str) {
        return Some(format!("id={id}"));
    }
    if let Some(id) = obj
        .get("unit")
        .and_then(|u| u.get("event"))
        .and_then(|e| e.get("id"))
        .and_then(Value::as_str)
    {
        return Some(format!("unit={id}"));
    }
    obj.get("round")
        .and_then(Value::as_u64)
        .map(|r| format!("round={r}"))
}

fn keyed(items: &[Value]) -> Option<Vec<(String, &Value)>> {
    let keys: Vec<String> = items.iter().map(element_key).collect::<Option<_>>()?;
    let unique: std::collections::BTreeSet<&String> = keys.iter().collect();
    (unique.len() == keys.len()).then(|| keys.into_iter().zip(items).collect())
}

fn diff_values(path: &str, a: &Value, g: &Value, out: &mut Vec<DiffEntry>) {
    match (a, g) {
        (Value::Object(am), Value::Object(gm)) => {
            let keys: std::collections::BTreeSet<&String> = am.keys().chain(gm.keys()).collect();
            for k in keys {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match (am.get(k), gm.get(k)) {
                    (Some(x), Some(y)) => diff_values(&p, x, y, out),
                    (x, y) => out.push(DiffEntry {
                        path: p,
                        actual: x.cloned(),
                        golden: y.cloned(),
                    }),
                }
            }
        }
        (Value::Array(ai), Value::Array(gi)) => {
            if let (Some(ak), Some(gk)) = (keyed(ai), keyed(gi)) {
                let gmap: std::collections::BTreeMap<&String, &Value> =
                    gk.iter().map(|(k, v)| (k, *v)).collect();
                let amap: std::collections::BTreeMap<&String, &Value> =
                    ak.iter().map(|(k, v)| (k, *v)).collect();
                for (k, x) in &ak {
                    let p = format!("{path}[{k}]");
                    match gmap.get(k) {
                        Some(y) => diff_values(&p, x, y, out),
                        None => out.push(DiffEntry {
                            path: p,
                            actual: Some((*x).clone()),
                            golden: None,
                        }),
                    }
                }
                for (k, y) in &gk {
                    if !amap.contains_key(k) {
                        out.push(DiffEntry {
                            path: format!("{path}[{k}]"),
                            actual: None,
                            golden: Some((*y).clone()),
                        });
                    }
                }
            } else {
                for i in 0..ai.len().max(gi.len()) {
                    let p = format!("{path}[{i}]");
                    match (ai.get(i), gi.get(i)) {
                        (Some(x), Some(y)) => diff_values(&p, x, y, out),
                        (x, y) => out.push(DiffEntry {
                            path: p,
                            actual: x.cloned(),
                            golden: y.cloned(),
                        }),
                    }
                }
            }
        }
        _ if a == g => {}
        _ => out.push(DiffEntry {
            path: path.to_string(),
            actual: Some(a.clone()),
            golden: Some(g.clone()),
        }),
    }
}

fn comparable(env: &RunEnvelope) -> Value {
    // The completed result repeats the records; compare them once.
    let outcome = match &env.outcome {
        Outcome::Completed { result } => serde_json::json!({
            "status": "completed",
            "conclusion": result.conclusion,
            "termination_reason": result.termination_reason,
            "rounds_executed": result.rounds_executed,
            "final_state": result.final_state,
        }),
        Outcome::Aborted(a) => serde_json::json!({"status": "aborted", "abort": a}),
    };
    let mut v = serde_json::json!({
        "records": env.records,
        "outcome": outcome,
    });
    strip_volatile(&mut v);
    v
}

/// Field-level differences between two runs of the same case and
/// configuration. Timestamps, latency and run ids are ignored.
pub fn compare_golden(
    actual: &RunEnvelope,
    golden: &RunEnvelope,
) -> Result<Vec<DiffEntry>, StoreError> {
    if actual.header.case_id != golden.header.case_id {
        return Err(StoreError::Incomparable(format!(
            "case {} vs {}",
            actual.header.case_id, golden.header.case_id
        )));
    }
    if actual.header.config_hash != golden.header.config_hash {
        return Err(StoreError::Incomparable(format!(
            "config hash {} vs {}",
            &actual.header.config_hash[..12],
            &golden.header.config_hash[..12]
        )));
    }
    let mut out = Vec::new();
    diff_values("", &comparable(actual), &comparable(golden), &mut out);
    Ok(out)
}
