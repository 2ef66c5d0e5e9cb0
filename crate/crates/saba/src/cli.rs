//! Command-line front end: `run`, `batch`, `eval`, `audit`, `validate`.
//!
//! Settings resolve as flags, then the TOML config file, then `SABA_*`
//! environment variables, then built-in defaults. Each failure class maps to
//! a fixed exit code; see [`Exit`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use saba_core::case::Difficulty;
use saba_core::cost::{cost_summary, CostBasis, CostMode};
use saba_core::embedding::{Embedder, HashProjectionEmbedder};
use saba_core::engine::Runtime;
use saba_core::eval::{reliability_audit, score_case, score_qa_case, EvalError, MatchConfig};
use saba_core::model::{LanguageModel, ResponseCache};
use saba_core::prompt::{PromptTemplates, TEMPLATE_NAMES};
use saba_core::state::{RunConfig, Variant};
use saba_core::{CaseSpec, Gold};
use serde::Deserialize;

use crate::backend::mock::FixtureError;
use crate::backend::{HttpConfig, HttpEmbedder, HttpModel, MockModel};
use crate::cache::DiskCache;
use crate::dataset::{self, DatasetError};
use crate::report::{self, AuditReport, Metrics, ScoreLine, REPORT_SCHEMA_VERSION};
use crate::runner::{self, RunFailure, RunSpec};
use crate::trace_store::{self, compare_golden, RunEnvelope, StoreError, TRACE_FILE};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Internal = 1,
    Usage = 2,
    Dataset = 3,
    BackendUnavailable = 4,
    MissingFixture = 5,
    FusionParse = 6,
    QsrParse = 7,
    StateStructural = 8,
    Storage = 9,
    Incomparable = 10,
    BatchPartial = 11,
    Eval = 12,
    GoldenMismatch = 13,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn from_class(class: &str) -> Self {
        match class {
            "missing_fixture" => Self::MissingFixture,
            "backend_unavailable" => Self::BackendUnavailable,
            "fusion_parse" => Self::FusionParse,
            "qsr_parse" => Self::QsrParse,
            "state_structural" => Self::StateStructural,
            "invalid_input" => Self::Dataset,
            "storage" => Self::Storage,
            "incomparable" => Self::Incomparable,
            _ => Self::Internal,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("dataset validation failed: {0}")]
    Dataset(#[from] DatasetError),
    #[error("mock fixtures: {0}")]
    Fixture(#[from] FixtureError),
    #[error("run failed: {0}")]
    Run(#[from] RunFailure),
    #[error("trace store: {0}")]
    Store(#[from] StoreError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("{failed} of {total} run(s) failed")]
    BatchPartial { failed: usize, total: usize },
    #[error("{0} run(s) differ from the golden traces")]
    GoldenMismatch(usize),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            Self::Usage(_) => Exit::Usage,
            Self::Dataset(_) | Self::Fixture(_) => Exit::Dataset,
            Self::Run(f) => Exit::from_class(f.class()),
            Self::Store(StoreError::Incomparable(_)) => Exit::Incomparable,
            Self::Store(_) => Exit::Storage,
            Self::Eval(_) => Exit::Eval,
            Self::BatchPartial { .. } => Exit::BatchPartial,
            Self::GoldenMismatch(_) => Exit::GoldenMismatch,
            Self::Io(_) => Exit::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Tokens,
    Calls,
    Latency,
}

impl From<BasisArg> for CostBasis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Tokens => CostBasis::Tokens,
            BasisArg::Calls => CostBasis::Calls,
            BasisArg::Latency => CostBasis::LatencyMs,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let all: Vec<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
        format!("unknown variant {s:?}; expected one of {}", all.join(", "))
    })
}

#[derive(Parser, Debug)]
#[command(
    name = "saba",
    version,
    about = "Structured abductive reasoning runner"
)]
pub struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one case file.
    Run(RunCmd),
    /// Run every case of a corpus, possibly several times and variants.
    Batch(BatchCmd),
    /// Score stored runs against corpus gold.
    Eval(EvalCmd),
    /// Hypothesis reliability over stored runs.
    Audit(AuditCmd),
    /// Check a corpus or a case file without running anything.
    Validate(ValidateCmd),
}

#[derive(Args, Debug, Default, Clone)]
pub struct EngineArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Mock fixture file or directory of fixture files.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub t_max: Option<u32>,
    /// Gate when conflicts are at most this many.
    #[arg(long)]
    pub gate_x: Option<u32>,
    /// Gate when doubts are at most this many.
    #[arg(long)]
    pub gate_y: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub hypotheses_per_query: Option<u32>,
    /// Total attempts per model call, retries included.
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Directory for run traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of `<template>.txt` files overriding the built-in prompts.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the provider token.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Compare each run against the same run id under this directory.
    #[arg(long)]
    pub golden: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunCmd {
    pub case: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct BatchCmd {
    /// Corpus directory or manifest file.
    pub corpus: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Repetitions per case.
    #[arg(long)]
    pub runs: Option<u32>,
    /// Concurrent runs.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Comma-separated variants; defaults to --variant.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Vec<Variant>,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Directory of run traces.
    pub traces: PathBuf,
    /// Corpus holding the gold annotations.
    pub corpus: PathBuf,
    /// Similarity threshold for proposition matching.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long, value_enum, default_value = "tokens")]
    pub cost_basis: BasisArg,
    #[arg(long, value_parser = parse_variant, default_value = "direct")]
    pub baseline: Variant,
    /// Where to write scores.jsonl and summary.json; defaults to the trace directory.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditCmd {
    pub traces: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateCmd {
    /// Corpus directory, manifest, or a single case file.
    pub path: PathBuf,
}

/// One configuration layer; unset fields fall through to the next layer.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub backend: Option<BackendKind>,
    pub fixtures: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub no_cache: Option<bool>,
    pub prompts_dir: Option<PathBuf>,
    pub variant: Option<String>,
    pub t_max: Option<u32>,
    pub gate_x: Option<u32>,
    pub gate_y: Option<u32>,
    pub temperature: Option<f64>,
    pub hypotheses_per_query: Option<u32>,
    pub max_attempts: Option<u32>,
    pub runs: Option<u32>,
    pub parallel: Option<usize>,
    pub threshold: Option<f64>,
    pub embedder: Option<EmbedderKind>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub embedding_model: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Settings { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Settings {
    /// Field-wise `self` over `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        layer!(
            self,
            lower,
            backend,
            fixtures,
            out,
            cache_dir,
            no_cache,
            prompts_dir,
            variant,
            t_max,
            gate_x,
            gate_y,
            temperature,
            hypotheses_per_query,
            max_attempts,
            runs,
            parallel,
            threshold,
            embedder,
            base_url,
            model,
            embedding_model,
            token_env,
            timeout_secs
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Reads `SABA_*` variables through `get`.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        fn num<T: std::str::FromStr>(
            get: &dyn Fn(&str) -> Option<String>,
            key: &str,
        ) -> Result<Option<T>, CliError> {
            match get(key) {
                None => Ok(None),
                Some(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| CliError::Usage(format!("{key}={v:?} is not a valid number"))),
            }
        }
        let get: &dyn Fn(&str) -> Option<String> = &get;
        let backend = match get("SABA_BACKEND").as_deref() {
            None => None,
            Some("mock") => Some(BackendKind::Mock),
            Some("http") => Some(BackendKind::Http),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "SABA_BACKEND={other:?} is not mock or http"
                )))
            }
        };
        let no_cache = match get("SABA_NO_CACHE").as_deref() {
            None => None,
            Some("1" | "true" | "yes") => Some(true),
            Some("0" | "false" | "no") => Some(false),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "SABA_NO_CACHE={other:?} is not a boolean"
                )))
            }
        };
        Ok(Settings {
            backend,
            fixtures: get("SABA_FIXTURES").map(PathBuf::from),
            out: get("SABA_OUT").map(PathBuf::from),
            cache_dir: get("SABA_CACHE_DIR").map(PathBuf::from),
            no_cache,
            prompts_dir: get("SABA_PROMPTS_DIR").map(PathBuf::from),
            variant: get("SABA_VARIANT"),
            t_max: num(get, "SABA_T_MAX")?,
            gate_x: num(get, "SABA_GATE_X")?,
            gate_y: num(get, "SABA_GATE_Y")?,
            temperature: num(get, "SABA_TEMPERATURE")?,
            hypotheses_per_query: num(get, "SABA_HYPOTHESES_PER_QUERY")?,
            max_attempts: num(get, "SABA_MAX_ATTEMPTS")?,
            runs: num(get, "SABA_RUNS")?,
            parallel: num(get, "SABA_PARALLEL")?,
            threshold: num(get, "SABA_THRESHOLD")?,
            embedder: None,
            base_url: get("SABA_BASE_URL"),
            model: get("SABA_MODEL"),
            embedding_model: get("SABA_EMBEDDING_MODEL"),
            token_env: get("SABA_TOKEN_ENV"),
            timeout_secs: num(get, "SABA_TIMEOUT_SECS")?,
        })
    }

    fn from_engine_args(a: &EngineArgs) -> Self {
        Settings {
            backend: a.backend,
            fixtures: a.fixtures.clone(),
            out: a.out.clone(),
            cache_dir: a.cache_dir.clone(),
            no_cache: a.no_cache.then_some(true),
            prompts_dir: a.prompts_dir.clone(),
            variant: a.variant.map(|v| v.label().to_string()),
            t_max: a.t_max,
            gate_x: a.gate_x,
            gate_y: a.gate_y,
            temperature: a.temperature,
            hypotheses_per_query: a.hypotheses_per_query,
            max_attempts: a.max_attempts,
            base_url: a.base_url.clone(),
            model: a.model.clone(),
            token_env: a.token_env.clone(),
            ..Settings::default()
        }
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let d = RunConfig::default();
        let variant = match &self.variant {
            Some(v) => parse_variant(v).map_err(CliError::Usage)?,
            None => d.variant,
        };
        let config = RunConfig {
            t_max: self.t_max.unwrap_or(d.t_max),
            gate_conflict_threshold: self.gate_x.unwrap_or(d.gate_conflict_threshold),
            gate_doubt_threshold: self.gate_y.unwrap_or(d.gate_doubt_threshold),
            variant,
            temperature: self.temperature.unwrap_or(d.temperature),
            hypotheses_per_query: self.hypotheses_per_query.unwrap_or(d.hypotheses_per_query),
            max_attempts: self.max_attempts.unwrap_or(d.max_attempts),
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn http_config(&self) -> HttpConfig {
        let d = HttpConfig::default();
        HttpConfig {
            base_url: self.base_url.clone().unwrap_or(d.base_url),
            model: self.model.clone().unwrap_or(d.model),
            embedding_model: self.embedding_model.clone().unwrap_or(d.embedding_model),
            token_env: self.token_env.clone().unwrap_or(d.token_env),
            timeout_secs: self.timeout_secs.unwrap_or(d.timeout_secs),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

/// Merges flags, the config file (if any), the environment and defaults.
pub fn resolve(
    flags: Settings,
    config_file: Option<&Path>,
    env: Settings,
) -> Result<Settings, CliError> {
    let file = match config_file {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    Ok(flags.over(file).over(env))
}

pub fn load_templates(dir: Option<&Path>) -> Result<PromptTemplates, CliError> {
    let mut t = PromptTemplates::default();
    if let Some(dir) = dir {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!(
                "prompts dir {} does not exist",
                dir.display()
            )));
        }
        for name in TEMPLATE_NAMES {
            let p = dir.join(format!("{name}.txt"));
            if p.is_file() {
                t.set(name, fs::read_to_string(&p)?);
            }
        }
    }
    Ok(t)
}

/// A fixture file, or every `*.json` file in a directory merged in name order.
pub fn load_fixtures(path: &Path) -> Result<MockModel, CliError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut iter = files.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| CliError::Usage(format!("no fixture files in {}", path.display())))?;
        let mut model = MockModel::load(&first)?;
        for f in iter {
            let next = MockModel::load(&f)?;
            model.merge(next).map_err(|reason| {
                CliError::Fixture(FixtureError::Invalid {
                    path: f.display().to_string(),
                    reason,
                })
            })?;
        }
        Ok(model)
    } else {
        Ok(MockModel::load(path)?)
    }
}

/// `mock.json` next to `anchor`, else in its parent.
fn default_fixtures(anchor: &Path) -> Option<PathBuf> {
    let dir = if anchor.is_dir() {
        anchor
    } else {
        anchor.parent()?
    };
    [dir.join("mock.json"), dir.parent()?.join("mock.json")]
        .into_iter()
        .find(|p| p.is_file())
}

/// Owns the backend and cache a [`Runtime`] borrows.
pub struct Engine {
    pub model: Box<dyn LanguageModel>,
    pub cache: Option<DiskCache>,
    pub templates: PromptTemplates,
}

impl Engine {
    pub fn build(settings: &Settings, anchor: &Path) -> Result<Self, CliError> {
        let backend = settings.backend.unwrap_or(BackendKind::Mock);
        let model: Box<dyn LanguageModel> = match backend {
            BackendKind::Mock => {
                let path = match &settings.fixtures {
                    Some(p) => p.clone(),
                    None => default_fixtures(anchor).ok_or_else(|| {
                        CliError::Usage(format!(
                            "no mock fixtures found near {}; pass --fixtures",
                            anchor.display()
                        ))
                    })?,
                };
                Box::new(load_fixtures(&path)?)
            }
            BackendKind::Http => Box::new(HttpModel::new(&settings.http_config())),
        };
        // The mock is deterministic and free, so it only caches on request.
        let cache_dir = match (
            settings.no_cache.unwrap_or(false),
            &settings.cache_dir,
            backend,
        ) {
            (true, _, _) => None,
            (false, Some(dir), _) => Some(dir.clone()),
            (false, None, BackendKind::Http) => Some(settings.out_dir().join(".cache")),
            (false, None, BackendKind::Mock) => None,
        };
        let cache = match cache_dir {
            Some(dir) => Some(DiskCache::open(&dir)?),
            None => None,
        };
        Ok(Self {
            model,
            cache,
            templates: load_templates(settings.prompts_dir.as_deref())?,
        })
    }

    pub fn runtime(&self) -> Runtime<'_> {
        Runtime {
            model: self.model.as_ref(),
            cache: self.cache.as_ref().map(|c| c as &dyn ResponseCache),
            templates: &self.templates,
        }
    }
}

fn split_label(corpus: Option<&str>, difficulty: Difficulty) -> String {
    match (corpus, difficulty) {
        (Some(name), Difficulty::NA) => name.to_string(),
        (Some(name), d) => format!("{name}-{d:?}"),
        (None, d) => format!("{d:?}"),
    }
}

/// Compares each listed run with its namesake under `golden`. Returns the
/// number of runs that differ.
fn check_golden(
    out: &mut dyn Write,
    actual_root: &Path,
    golden_root: &Path,
    run_ids: &[String],
) -> Result<usize, CliError> {
    let mut differing = 0;
    for id in run_ids {
        let actual = trace_store::read_envelope(&actual_root.join(id))?;
        let golden = trace_store::read_envelope(&golden_root.join(id))?;
        let diffs = compare_golden(&actual, &golden)?;
        if !diffs.is_empty() {
            differing += 1;
            writeln!(out, "{id}: {} difference(s) from golden", diffs.len())?;
            for d in diffs.iter().take(20) {
                writeln!(out, "  {}: {:?} != {:?}", d.path, d.actual, d.golden)?;
            }
        }
    }
    Ok(differing)
}

fn print_conclusion(
    out: &mut dyn Write,
    case: &CaseSpec,
    result: &saba_core::RunResult,
) -> std::io::Result<()> {
    for dim in &case.task.dimensions {
        let answer = result.conclusion.answer(dim).unwrap_or("-");
        writeln!(out, "  {}: {answer}", dim.label())?;
    }
    Ok(())
}

pub fn cmd_run(cmd: &RunCmd, settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let case = dataset::load_case(&cmd.case)?;
    let config = settings.run_config()?;
    let engine = Engine::build(settings, &cmd.case)?;
    let root = settings.out_dir();
    let run_id = cmd
        .run_id
        .clone()
        .unwrap_or_else(|| runner::run_id(&case.case_id, config.variant, None));
    let spec = RunSpec {
        case: &case,
        config,
        run_id: run_id.clone(),
        split: split_label(None, case.difficulty),
        run_index: 1,
    };
    let result = runner::execute(&engine.runtime(), &root, &spec)?;
    let cost = cost_summary(&result.trace, CostMode::default());
    writeln!(
        out,
        "{run_id}: {:?} after {} round(s); {} call(s), {} tokens ({} cached)",
        result.termination_reason,
        result.rounds_executed,
        cost.calls,
        cost.total_tokens(),
        cost.cache_hits
    )?;
    print_conclusion(out, &case, &result)?;
    writeln!(
        out,
        "trace: {}",
        root.join(&run_id).join(TRACE_FILE).display()
    )?;
    if let Some(golden) = &cmd.engine.golden {
        let differing = check_golden(out, &root, golden, &[run_id])?;
        if differing > 0 {
            return Err(CliError::GoldenMismatch(differing));
        }
    }
    Ok(())
}

pub fn cmd_batch(cmd: &BatchCmd, settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = dataset::load_corpus(&cmd.corpus)?;
    let base = settings.run_config()?;
    let variants = if cmd.variants.is_empty() {
        vec![base.variant]
    } else {
        cmd.variants.clone()
    };
    let configs: Vec<RunConfig> = variants
        .iter()
        .map(|v| RunConfig {
            variant: *v,
            ..base.clone()
        })
        .collect();
    let runs = settings.runs.unwrap_or(3);
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let parallel = settings.parallel.unwrap_or(1).max(1);
    let engine = Engine::build(settings, &corpus.root)?;
    let root = settings.out_dir();
    fs::create_dir_all(&root)?;
    let name = corpus.manifest.name.clone();
    let outcomes = runner::run_batch(
        &engine.runtime(),
        &root,
        &corpus.cases,
        &configs,
        runs,
        parallel,
        |c| split_label(Some(&name), c.difficulty),
    );
    let total = outcomes.len();
    let scorer = Scorer::new(None, None, settings)?;
    let mut failed = 0;
    let mut completed = Vec::new();
    let mut lines = Vec::new();
    for o in &outcomes {
        match &o.result {
            Ok(r) => {
                completed.push(o.run_id.clone());
                log::info!("{}: {:?}", o.run_id, r.termination_reason);
                let case = corpus
                    .case(&o.case_id)
                    .expect("batch cases come from the corpus");
                lines.push(ScoreLine {
                    run_id: o.run_id.clone(),
                    case_id: o.case_id.clone(),
                    split: split_label(Some(&name), case.difficulty),
                    variant: o.variant,
                    run_index: o.run_index,
                    cost: report::records_cost(&r.trace, CostBasis::Tokens),
                    metrics: scorer.metrics(r, case)?,
                });
            }
            Err(e) => {
                failed += 1;
                writeln!(out, "{}: FAILED [{}] {e}", o.run_id, e.class())?;
            }
        }
    }
    writeln!(
        out,
        "{} of {total} run(s) completed ({} case(s) × {} variant(s) × {runs} run(s)); traces in {}",
        total - failed,
        corpus.cases.len(),
        configs.len(),
        root.display()
    )?;
    if !lines.is_empty() {
        publish_scores(
            out,
            &root,
            &lines,
            failed,
            Variant::Direct,
            CostBasis::Tokens,
        )?;
    }
    if let Some(golden) = &cmd.engine.golden {
        let differing = check_golden(out, &root, golden, &completed)?;
        if differing > 0 {
            return Err(CliError::GoldenMismatch(differing));
        }
        writeln!(
            out,
            "all {} completed run(s) match golden traces",
            completed.len()
        )?;
    }
    if failed > 0 {
        return Err(CliError::BatchPartial { failed, total });
    }
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("serializes"));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_envelopes(dir: &Path) -> Result<Vec<RunEnvelope>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let envs = trace_store::read_all(dir)?;
    if envs.is_empty() {
        return Err(CliError::Usage(format!(
            "no run traces under {}",
            dir.display()
        )));
    }
    Ok(envs)
}

/// Scores finished runs against their case's gold.
pub struct Scorer {
    embedder: Box<dyn Embedder>,
    config: MatchConfig,
}

impl Scorer {
    pub fn new(
        threshold: Option<f64>,
        embedder: Option<EmbedderKind>,
        settings: &Settings,
    ) -> Result<Self, CliError> {
        let config = MatchConfig {
            threshold: threshold
                .or(settings.threshold)
                .unwrap_or(MatchConfig::default().threshold),
        };
        config.validate()?;
        let embedder: Box<dyn Embedder> =
            match embedder.or(settings.embedder).unwrap_or(EmbedderKind::Hash) {
                EmbedderKind::Hash => Box::new(HashProjectionEmbedder::default()),
                EmbedderKind::Http => Box::new(HttpEmbedder::new(&settings.http_config())),
            };
        Ok(Self { embedder, config })
    }

    pub fn metrics(
        &self,
        result: &saba_core::RunResult,
        case: &CaseSpec,
    ) -> Result<Metrics, EvalError> {
        Ok(match &case.gold {
            Gold::Detective { .. } => Metrics::Detective(score_case(
                self.embedder.as_ref(),
                None,
                result,
                case,
                &self.config,
            )?),
            Gold::Qa { .. } => Metrics::Qa(score_qa_case(result, case)?),
        })
    }
}

/// Writes `scores.jsonl` and `summary.json` into `dir` and prints the table.
fn publish_scores(
    out: &mut dyn Write,
    dir: &Path,
    lines: &[ScoreLine],
    failed: usize,
    baseline: Variant,
    basis: CostBasis,
) -> Result<(), CliError> {
    let summary = report::summarize(lines, failed, baseline, basis)?;
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("scores.jsonl"), lines)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write!(out, "{}", report::render_summary(&summary))?;
    Ok(())
}

pub fn cmd_eval(cmd: &EvalCmd, settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = dataset::load_corpus(&cmd.corpus)?;
    let envs = read_envelopes(&cmd.traces)?;
    let scorer = Scorer::new(cmd.threshold, cmd.embedder, settings)?;
    let basis: CostBasis = cmd.cost_basis.into();
    let mut lines = Vec::new();
    let mut failed = 0;
    for env in &envs {
        let Some(result) = env.result() else {
            failed += 1;
            continue;
        };
        let case = corpus
            .case(&env.header.case_id)
            .ok_or_else(|| DatasetError::Invalid {
                path: corpus
                    .root
                    .join(dataset::MANIFEST_FILE)
                    .display()
                    .to_string(),
                field: "cases".into(),
                reason: format!(
                    "no gold for case {} (run {})",
                    env.header.case_id, env.header.run_id
                ),
            })?;
        lines.push(ScoreLine {
            run_id: env.header.run_id.clone(),
            case_id: env.header.case_id.clone(),
            split: env.header.split.clone(),
            variant: env.header.config.variant,
            run_index: env.header.run_index,
            cost: report::run_cost(env, basis),
            metrics: scorer.metrics(result, case)?,
        });
    }
    let dir = cmd.report_dir.clone().unwrap_or_else(|| cmd.traces.clone());
    publish_scores(out, &dir, &lines, failed, cmd.baseline, basis)
}

pub fn audit_report(envs: &[RunEnvelope]) -> AuditReport {
    let mut groups: BTreeMap<String, Vec<&[saba_core::state::TraceRecord]>> = BTreeMap::new();
    for e in envs {
        if !e.records.iter().any(|r| !r.hypotheses_added.is_empty()) {
            continue;
        }
        let key = format!("{}/{}", e.header.split, e.header.config.variant.label());
        groups.entry(key).or_default().push(&e.records);
    }
    AuditReport {
        schema_version: REPORT_SCHEMA_VERSION,
        splits: groups
            .into_iter()
            .map(|(k, runs)| (k, reliability_audit(runs)))
            .collect(),
        overall: reliability_audit(envs.iter().map(|e| e.records.as_slice())),
    }
}

pub fn cmd_audit(cmd: &AuditCmd, out: &mut dyn Write) -> Result<(), CliError> {
    let envs = read_envelopes(&cmd.traces)?;
    let report = audit_report(&envs);
    write_json(&cmd.traces.join("audit.json"), &report)?;
    write!(out, "{}", report::render_audit(&report))?;
    Ok(())
}

pub fn cmd_validate(cmd: &ValidateCmd, out: &mut dyn Write) -> Result<(), CliError> {
    let p = &cmd.path;
    let is_manifest = p.is_dir() || p.file_name().is_some_and(|n| n == dataset::MANIFEST_FILE);
    if is_manifest {
        let corpus = dataset::load_corpus(p)?;
        let tally: Vec<String> = corpus
            .tally()
            .iter()
            .map(|(d, n)| format!("{d:?}={n}"))
            .collect();
        writeln!(
            out,
            "{}: {:?} corpus, {} case(s) valid [{}]",
            corpus.manifest.name,
            corpus.manifest.mode,
            corpus.cases.len(),
            tally.join(", ")
        )?;
    } else {
        let case = dataset::load_case(p)?;
        writeln!(
            out,
            "{}: valid ({} narrative unit(s))",
            case.case_id,
            case.narrative.len()
        )?;
    }
    Ok(())
}

/// Parses `args` and runs the command, writing human output to `out`.
/// Returns the process exit code.
pub fn run_with(
    args: impl IntoIterator<Item = OsString>,
    env: impl Fn(&str) -> Option<String>,
    out: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                Exit::Usage.code()
            } else {
                Exit::Ok.code()
            };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    match dispatch(&cli, env, out) {
        Ok(()) => Exit::Ok.code(),
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            e.exit().code()
        }
    }
}

fn dispatch(
    cli: &Cli,
    env: impl Fn(&str) -> Option<String>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let env = Settings::from_env(env)?;
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Run(c) => {
            let s = resolve(Settings::from_engine_args(&c.engine), file, env)?;
            cmd_run(c, &s, out)
        }
        Command::Batch(c) => {
            let mut flags = Settings::from_engine_args(&c.engine);
            flags.runs = c.runs;
            flags.parallel = c.parallel;
            let s = resolve(flags, file, env)?;
            cmd_batch(c, &s, out)
        }
        Command::Eval(c) => {
            let s = resolve(Settings::default(), file, env)?;
            cmd_eval(c, &s, out)
        }
        Command::Audit(c) => cmd_audit(c, out),
        Command::Validate(c) => cmd_validate(c, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_file_env_default() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("saba.toml");
        fs::write(&cfg, "t_max = 5\ngate_x = 2\nvariant = \"no-if\"\n").unwrap();
        let env = Settings::from_env(|k| match k {
            "SABA_T_MAX" => Some("7".into()),
            "SABA_GATE_X" => Some("9".into()),
            "SABA_GATE_Y" => Some("4".into()),
            _ => None,
        })
        .unwrap();
        let flags = Settings {
            t_max: Some(1),
            ..Settings::default()
        };
        let s = resolve(flags, Some(&cfg), env).unwrap();
        let c = s.run_config().unwrap();
        assert_eq!(c.t_max, 1); // flag
        assert_eq!(c.gate_conflict_threshold, 2); // file
        assert_eq!(c.gate_doubt_threshold, 4); // env
        assert_eq!(c.variant, Variant::NoIF);
        assert_eq!(c.temperature, 0.0); // default
    }

    #[test]
    fn bad_settings_are_usage_errors() {
        assert!(matches!(
            Settings::from_env(|k| (k == "SABA_T_MAX").then(|| "x".into())),
            Err(CliError::Usage(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("saba.toml");
        fs::write(&cfg, "unknown_key = 1\n").unwrap();
        assert!(matches!(
            resolve(Settings::default(), Some(&cfg), Settings::default()),
            Err(CliError::Usage(_))
        ));
        let s = Settings {
            variant: Some("bogus".into()),
            ..Settings::default()
        };
        assert!(s.run_config().is_err());
    }

    #[test]
    fn unknown_flag_rejected() {
        let mut out = Vec::new();
        let code = run_with(
            ["saba", "audit", "x", "--frobnicate"].map(OsString::from),
            |_| None,
            &mut out,
        );
        assert_eq!(code, Exit::Usage.code());
        let mut out = Vec::new();
        assert_eq!(
            run_with(["saba", "--help"].map(OsString::from), |_| None, &mut out),
            0
        );
    }
}
