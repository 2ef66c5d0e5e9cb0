//! Executes runs against the trace store, singly or as a parallel batch.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use saba_core::engine::{run, QsrError, RunError, RunResult, Runtime};
use saba_core::fusion::FusionError;
use saba_core::model::{BackendError, CallError};
use saba_core::state::{RunConfig, Variant};
use saba_core::CaseSpec;

use crate::trace_store::{RunHeader, StoreError, TraceWriter};

#[derive(Debug, thiserror::Error)]
pub enum RunFailure {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RunFailure {
    /// Stable label recorded in abort markers and used for exit codes.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Store(StoreError::Incomparable(_)) => "incomparable",
            Self::Store(_) | Self::Run(RunError::Storage(_)) => "storage",
            Self::Run(e) => run_error_class(e),
        }
    }
}

pub fn run_error_class(e: &RunError) -> &'static str {
    if let Some(b) = e.backend_error() {
        return match b {
            BackendError::MissingFixture(_) => "missing_fixture",
            BackendError::InvalidInput(_) => "invalid_input",
            BackendError::Transient(_) | BackendError::Unavailable(_) => "backend_unavailable",
        };
    }
    match e {
        RunError::Invalid(_) | RunError::Fusion(FusionError::EmptyInput) => "invalid_input",
        RunError::Fusion(FusionError::State(_)) | RunError::Qsr(QsrError::State(_)) => {
            "state_structural"
        }
        RunError::Fusion(_) => "fusion_parse",
        RunError::Qsr(QsrError::Call(CallError::Template(_))) => "fusion_parse",
        RunError::Qsr(_) => "qsr_parse",
        RunError::Storage(_) => "storage",
    }
}

/// What to run and where to file it.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub case: &'a CaseSpec,
    pub config: RunConfig,
    pub run_id: String,
    pub split: String,
    pub run_index: u32,
}

/// Runs one case, streaming its trace to `<root>/<run_id>/`. On failure the
/// partial trace is closed with an abort marker.
pub fn execute(
    runtime: &Runtime<'_>,
    root: &Path,
    spec: &RunSpec<'_>,
) -> Result<RunResult, RunFailure> {
    let mut header = RunHeader::new(&spec.run_id, &spec.case.case_id, &spec.split, &spec.config);
    header.run_index = spec.run_index;
    let mut writer = TraceWriter::create(root, header)?;
    match run(runtime, spec.case, &spec.config, &mut writer) {
        Ok(result) => {
            writer.finish(&result)?;
            Ok(result)
        }
        Err(e) => {
            let failure = match writer.take_error() {
                Some(store) => RunFailure::Store(store),
                None => RunFailure::Run(e),
            };
            if let Err(abort_err) = writer.abort(failure.class(), &failure.to_string()) {
                log::error!("could not record abort for {}: {abort_err}", spec.run_id);
            }
            Err(failure)
        }
    }
}

pub fn run_id(case_id: &str, variant: Variant, run_index: Option<u32>) -> String {
    match run_index {
        Some(k) => format!("{case_id}-{}-run{k}", variant.label()),
        None => format!("{case_id}-{}", variant.label()),
    }
}

#[derive(Debug)]
pub struct JobOutcome {
    pub run_id: String,
    pub case_id: String,
    pub variant: Variant,
    pub run_index: u32,
    pub result: Result<RunResult, RunFailure>,
}

/// Runs every case under every config, `runs` times each, on up to
/// `parallel` threads. Failures are collected, not propagated. Outcomes come
/// back in job order regardless of scheduling.
pub fn run_batch(
    runtime: &Runtime<'_>,
    root: &Path,
    cases: &[CaseSpec],
    configs: &[RunConfig],
    runs: u32,
    parallel: usize,
    split: impl Fn(&CaseSpec) -> String + Sync,
) -> Vec<JobOutcome> {
    let mut jobs = Vec::new();
    for k in 1..=runs {
        for config in configs {
            for case in cases {
                jobs.push(RunSpec {
                    case,
                    config: config.clone(),
                    run_id: run_id(&case.case_id, config.variant, Some(k)),
                    split: split(case),
                    run_index: k,
                });
            }
        }
    }
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, JobOutcome)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = parallel.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = jobs.get(i) else { break };
                let result = execute(runtime, root, spec);
                if let Err(e) = &result {
                    log::warn!("{} failed: {e}", spec.run_id);
                }
                done.lock().unwrap().push((
                    i,
                    JobOutcome {
                        run_id: spec.run_id.clone(),
                        case_id: spec.case.case_id.clone(),
                        variant: spec.config.variant,
                        run_index: spec.run_index,
                        result,
                    },
                ));
            });
        }
    });
    let mut done = done.into_inner().unwrap();
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, o)| o).collect()
}
