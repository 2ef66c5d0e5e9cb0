//! The recursive control loop: fusion, adaptive gating, obstacle → query →
//! hypothesis rounds, termination, and final synthesis.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::case::CaseSpec;
use crate::fusion::{self, FusionError};
use crate::json;
use crate::model::{CallError, Gateway, LanguageModel, ModelResponse, PromptKind, ResponseCache};
use crate::prompt::{self, PromptTemplates};
use crate::state::{
    validate_narrative, Conclusion, FusionSnapshot, HypothesisItem, ItemId, ModelCall, Obstacle,
    ObstacleType, QueryItem, ReasoningState, RunConfig, StateError, SupportStatus, Task,
    TaskDimension, TraceRecord, Variant,
};

/// Everything a stage needs to issue a model call for one case.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub gateway: Gateway<'a>,
    pub templates: &'a PromptTemplates,
    pub case_id: &'a str,
}

impl<'a> Context<'a> {
    pub fn render(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, CallError> {
        self.templates
            .render(template, vars)
            .map_err(|e| CallError::Template(e.to_string()))
    }

    pub fn call<T>(
        &self,
        kind: PromptKind,
        prompt: String,
        round: u32,
        item: Option<&str>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<ModelResponse<T>, CallError> {
        self.gateway
            .call(kind, prompt, self.case_id, round, item, parse)
    }
}

/// Model, cache and templates shared by every run.
#[derive(Clone, Copy)]
pub struct Runtime<'a> {
    pub model: &'a dyn LanguageModel,
    pub cache: Option<&'a dyn ResponseCache>,
    pub templates: &'a PromptTemplates,
}

impl<'a> Runtime<'a> {
    pub fn context(&self, case_id: &'a str, config: &RunConfig) -> Context<'a> {
        Context {
            gateway: Gateway::new(self.model)
                .with_cache(self.cache)
                .with_temperature(config.temperature)
                .with_max_attempts(config.max_attempts),
            templates: self.templates,
            case_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QsrError {
    #[error("reasoning-loop model call failed: {0}")]
    Call(#[from] CallError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("invalid run input: {0}")]
    Invalid(StateError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Qsr(#[from] QsrError),
    #[error("trace storage failed: {0}")]
    Storage(String),
}

impl RunError {
    /// The backend failure underneath, if the run died on one.
    pub fn backend_error(&self) -> Option<&crate::model::BackendError> {
        let call = match self {
            Self::Fusion(FusionError::Call(c)) | Self::Qsr(QsrError::Call(c)) => c,
            _ => return None,
        };
        match call {
            CallError::Backend(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// Baseline conflicts and doubts within thresholds; the loop never ran.
    GatedBypass,
    /// Obstacle identification returned nothing.
    LogicalClosure,
    MaxDepth,
    /// Variants that never enter the loop (direct, cot, no-awareness).
    SinglePass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub conclusion: Conclusion,
    pub trace: Vec<TraceRecord>,
    pub termination_reason: TerminationReason,
    pub rounds_executed: u32,
    /// `None` for single-call variants, which build no state.
    pub final_state: Option<ReasoningState>,
}

impl RunResult {
    pub fn model_calls(&self) -> impl Iterator<Item = &ModelCall> {
        self.trace.iter().flat_map(|r| r.model_calls.iter())
    }

    pub fn calls_of(&self, kind: PromptKind) -> usize {
        self.model_calls().filter(|c| c.kind == kind).count()
    }
}

/// Receives each trace record as soon as its round is complete.
pub trait TraceSink {
    fn append(&mut self, record: &TraceRecord) -> Result<(), String>;

    /// Called with the initial state and with every enriched state.
    fn observe_state(&mut self, _state: &ReasoningState) {}
}

impl TraceSink for Vec<TraceRecord> {
    fn append(&mut self, record: &TraceRecord) -> Result<(), String> {
        self.push(record.clone());
        Ok(())
    }
}

pub struct NullSink;

impl TraceSink for NullSink {
    fn append(&mut self, _record: &TraceRecord) -> Result<(), String> {
        Ok(())
    }
}

/// `|C| <= x AND |D| <= y`.
pub fn should_gate(conflicts: usize, doubts: usize, config: &RunConfig) -> bool {
    conflicts <= config.gate_conflict_threshold as usize
        && doubts <= config.gate_doubt_threshold as usize
}

#[derive(Deserialize)]
struct AwareReply {
    obstacles: Vec<ObstacleReply>,
}

#[derive(Deserialize)]
struct ObstacleReply {
    #[serde(rename = "type")]
    obstacle_type: String,
    dimension: String,
    requirement: String,
}

#[derive(Deserialize)]
struct DecomposeReply {
    #[serde(default)]
    queries: Vec<String>,
}

#[derive(Deserialize)]
struct HypothesisReply {
    statement: String,
    #[serde(default)]
    citations: Vec<String>,
    #[serde(default)]
    flagged: bool,
    #[serde(default)]
    supersedes: Option<String>,
}

#[derive(Deserialize)]
struct SynthesisReply {
    answers: BTreeMap<String, String>,
    #[serde(default)]
    rationale: String,
    #[serde(default)]
    support: Vec<String>,
}

/// Asks the model what still blocks the task. An empty list means logical closure.
pub fn identify_obstacles(
    ctx: &Context<'_>,
    state: &ReasoningState,
    task: &Task,
) -> Result<(Vec<Obstacle>, ModelCall), QsrError> {
    let text = ctx.render(
        prompt::AWARE,
        &[
            ("state", &prompt::render_state(state)),
            ("task", &prompt::render_task(task)),
        ],
    )?;
    let t = state.round;
    let parse = |raw: &str| -> Result<Vec<Obstacle>, String> {
        let reply: AwareReply = json::from_reply(raw)?;
        reply
            .obstacles
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                if o.requirement.trim().is_empty() {
                    return Err(format!("obstacle {i} has an empty requirement"));
                }
                let mut dim = TaskDimension::from(o.dimension.clone());
                if !task.declares(&dim) {
                    log::warn!(
                        "obstacle {i} blocks undeclared dimension {:?}; kept as Other",
                        o.dimension
                    );
                    dim = TaskDimension::Other(o.dimension);
                }
                Ok(Obstacle {
                    id: ItemId::new(format!("o{t}-{i}")),
                    obstacle_type: ObstacleType::from(o.obstacle_type),
                    blocked_dimension: dim,
                    requirement: o.requirement,
                    round: t,
                })
            })
            .collect()
    };
    let resp = ctx.call(PromptKind::Aware, text, t, None, parse)?;
    let call = resp.call_record(PromptKind::Aware, None);
    Ok((resp.parsed, call))
}

/// Per-round id allocation for queries and hypotheses.
#[derive(Debug)]
pub struct IdAllocator {
    round: u32,
    queries: usize,
    hypotheses: usize,
}

impl IdAllocator {
    /// Allocates ids for items created in `round`.
    pub fn new(round: u32) -> Self {
        Self {
            round,
            queries: 0,
            hypotheses: 0,
        }
    }

    fn query(&mut self) -> ItemId {
        let id = ItemId::new(format!("q{}-{}", self.round, self.queries));
        self.queries += 1;
        id
    }

    fn hypothesis(&mut self) -> ItemId {
        let id = ItemId::new(format!("h{}-{}", self.round, self.hypotheses));
        self.hypotheses += 1;
        id
    }
}

/// Splits one obstacle into sub-queries. An empty reply falls back to the
/// requirement itself as the single query.
pub fn decompose_obstacle(
    ctx: &Context<'_>,
    obstacle: &Obstacle,
    state: &ReasoningState,
    ids: &mut IdAllocator,
) -> Result<(Vec<QueryItem>, ModelCall), QsrError> {
    let text = ctx.render(
        prompt::DECOMPOSE,
        &[
            ("obstacle", &prompt::render_obstacle(obstacle)),
            ("state", &prompt::render_state(state)),
        ],
    )?;
    let parse = |raw: &str| -> Result<Vec<String>, String> {
        let reply: DecomposeReply = json::from_reply(raw)?;
        if reply.queries.iter().any(|q| q.trim().is_empty()) {
            return Err("blank sub-query".into());
        }
        Ok(reply.queries)
    };
    let item = obstacle.id.as_str();
    let resp = ctx.call(PromptKind::Decompose, text, state.round, Some(item), parse)?;
    let call = resp.call_record(PromptKind::Decompose, Some(item.into()));
    let mut questions = resp.parsed;
    if questions.is_empty() {
        questions.push(obstacle.requirement.clone());
    }
    let queries = questions
        .into_iter()
        .map(|question| QueryItem {
            id: ids.query(),
            obstacle_id: obstacle.id.clone(),
            question,
            round: state.round + 1,
        })
        .collect();
    Ok((queries, call))
}

/// One hypothesis for one sub-query. `variant_index` > 0 only when more than one
/// hypothesis per query is requested.
pub fn generate_hypothesis(
    ctx: &Context<'_>,
    query: &QueryItem,
    state: &ReasoningState,
    ids: &mut IdAllocator,
    variant_index: u32,
) -> Result<(HypothesisItem, ModelCall), QsrError> {
    let text = ctx.render(
        prompt::HYPOTHESIZE,
        &[
            ("query", &prompt::render_query(query)),
            ("state", &prompt::render_state(state)),
        ],
    )?;
    let mut known = state.item_ids();
    known.insert(query.id.clone());
    let prior: BTreeSet<&str> = state.hypotheses.iter().map(|h| h.id.as_str()).collect();
    let parse = |raw: &str| -> Result<HypothesisReply, String> {
        let reply: HypothesisReply = json::from_reply(raw)?;
        if reply.statement.trim().is_empty() {
            return Err("empty hypothesis statement".into());
        }
        if let Some(bad) = reply.citations.iter().find(|c| !known.contains(c.as_str())) {
            return Err(format!("citation of unknown item {bad}"));
        }
        if let Some(prev) = &reply.supersedes {
            if !prior.contains(prev.as_str()) {
                return Err(format!("supersedes unknown hypothesis {prev}"));
            }
        }
        Ok(reply)
    };
    let item = if variant_index == 0 {
        query.id.to_string()
    } else {
        format!("{}#{variant_index}", query.id)
    };
    let resp = ctx.call(
        PromptKind::Hypothesize,
        text,
        state.round,
        Some(&item),
        parse,
    )?;
    let call = resp.call_record(PromptKind::Hypothesize, Some(item));
    let reply = resp.parsed;
    let status = SupportStatus::classify(reply.flagged, !reply.citations.is_empty());
    Ok((
        HypothesisItem {
            id: ids.hypothesis(),
            query_id: query.id.clone(),
            statement: reply.statement,
            support_status: status,
            citations: reply.citations.into_iter().map(ItemId::new).collect(),
            supersedes: reply.supersedes.map(ItemId::new),
            round: state.round + 1,
        },
        call,
    ))
}

fn parse_conclusion(raw: &str, task: &Task) -> Result<Conclusion, String> {
    let reply: SynthesisReply = json::from_reply(raw)?;
    let answers: BTreeMap<TaskDimension, String> = reply
        .answers
        .into_iter()
        .map(|(k, v)| (TaskDimension::from(k), v))
        .collect();
    let mut per_dimension = BTreeMap::new();
    for dim in &task.dimensions {
        match answers.get(dim) {
            Some(a) if !a.trim().is_empty() => {
                per_dimension.insert(dim.clone(), a.clone());
            }
            _ => return Err(format!("no answer for dimension {dim}")),
        }
    }
    Ok(Conclusion {
        per_dimension,
        rationale: reply.rationale,
        support: reply.support,
    })
}

/// Final answer from the accumulated state.
pub fn synthesize(
    ctx: &Context<'_>,
    state: &ReasoningState,
    task: &Task,
) -> Result<(Conclusion, ModelCall), QsrError> {
    let text = ctx.render(
        prompt::SYNTHESIZE,
        &[
            ("state", &prompt::render_state(state)),
            ("task", &prompt::render_task(task)),
        ],
    )?;
    let resp = ctx.call(PromptKind::Synthesize, text, state.round, None, |raw| {
        parse_conclusion(raw, task)
    })?;
    let call = resp.call_record(PromptKind::Synthesize, None);
    Ok((resp.parsed, call))
}

/// Single-call answer for the `direct` and `cot` baselines.
pub fn direct_answer(
    ctx: &Context<'_>,
    case: &CaseSpec,
    variant: Variant,
) -> Result<(Conclusion, ModelCall), QsrError> {
    let template = if variant == Variant::CoT {
        prompt::COT
    } else {
        prompt::DIRECT
    };
    let text = ctx.render(
        template,
        &[
            ("narrative", &prompt::render_narrative(&case.narrative)),
            ("task", &prompt::render_task(&case.task)),
        ],
    )?;
    let resp = ctx.call(PromptKind::DirectAnswer, text, 0, None, |raw| {
        parse_conclusion(raw, &case.task)
    })?;
    let call = resp.call_record(PromptKind::DirectAnswer, None);
    Ok((resp.parsed, call))
}

/// Writes records to the sink one round late, so the final synthesis call can
/// join the last record before it is flushed.
struct Recorder<'s> {
    sink: &'s mut dyn TraceSink,
    pending: Option<TraceRecord>,
    written: Vec<TraceRecord>,
}

impl<'s> Recorder<'s> {
    fn push(&mut self, record: TraceRecord) -> Result<(), RunError> {
        self.flush()?;
        self.pending = Some(record);
        Ok(())
    }

    fn flush(&mut self) -> Result<(), RunError> {
        if let Some(record) = self.pending.take() {
            self.sink.append(&record).map_err(RunError::Storage)?;
            self.written.push(record);
        }
        Ok(())
    }

    fn attach(&mut self, call: ModelCall) {
        if let Some(record) = self.pending.as_mut() {
            record.model_calls.push(call);
        }
    }

    /// Flushes whatever is pending, then hands back `err`.
    fn abort<T>(&mut self, err: impl Into<RunError>) -> Result<T, RunError> {
        self.flush()?;
        Err(err.into())
    }
}

/// Runs one case end to end.
pub fn run(
    runtime: &Runtime<'_>,
    case: &CaseSpec,
    config: &RunConfig,
    sink: &mut dyn TraceSink,
) -> Result<RunResult, RunError> {
    config.validate().map_err(RunError::Invalid)?;
    case.task.validate().map_err(RunError::Invalid)?;
    if case.narrative.is_empty() {
        return Err(FusionError::EmptyInput.into());
    }
    validate_narrative(&case.narrative).map_err(RunError::Invalid)?;

    let ctx = runtime.context(&case.case_id, config);
    let mut rec = Recorder {
        sink,
        pending: None,
        written: Vec::new(),
    };

    if config.variant.is_single_call() {
        let (conclusion, call) = direct_answer(&ctx, case, config.variant)?;
        rec.push(TraceRecord {
            round: 0,
            obstacles: Vec::new(),
            queries_added: Vec::new(),
            hypotheses_added: Vec::new(),
            state_size_after: Default::default(),
            model_calls: alloc::vec![call],
            fusion: None,
        })?;
        rec.flush()?;
        return Ok(RunResult {
            conclusion,
            trace: rec.written,
            termination_reason: TerminationReason::SinglePass,
            rounds_executed: 0,
            final_state: None,
        });
    }

    // Phase one.
    let fused = fusion::fuse(&ctx, &case.narrative, config.variant)?;
    let gated =
        config.variant != Variant::NoIF && should_gate(fused.conflicts, fused.doubts, config);
    let mut state = ReasoningState::new(fused.baseline.clone()).map_err(FusionError::from)?;
    rec.push(TraceRecord {
        round: 0,
        obstacles: Vec::new(),
        queries_added: Vec::new(),
        hypotheses_added: Vec::new(),
        state_size_after: state.size(),
        model_calls: fused.calls,
        fusion: Some(FusionSnapshot {
            baseline: fused.baseline,
            conflicts: fused.conflicts,
            doubts: fused.doubts,
            gated,
        }),
    })?;
    rec.sink.observe_state(&state);

    let mut rounds = 0;
    let reason = if config.variant == Variant::NoAwareness {
        TerminationReason::SinglePass
    } else if gated {
        TerminationReason::GatedBypass
    } else {
        // Phase two.
        let mut reason = TerminationReason::MaxDepth;
        while state.round < config.t_max {
            let t = state.round;
            let (obstacles, aware_call) = match identify_obstacles(&ctx, &state, &case.task) {
                Ok(v) => v,
                Err(e) => return rec.abort(e),
            };
            rounds += 1;
            let mut calls = alloc::vec![aware_call];
            if obstacles.is_empty() {
                rec.push(TraceRecord {
                    round: t + 1,
                    obstacles,
                    queries_added: Vec::new(),
                    hypotheses_added: Vec::new(),
                    state_size_after: state.size(),
                    model_calls: calls,
                    fusion: None,
                })?;
                reason = TerminationReason::LogicalClosure;
                break;
            }

            let mut queries = Vec::new();
            let mut hypotheses = Vec::new();
            if config.variant != Variant::SelfAssessmentOnly {
                let mut ids = IdAllocator::new(t + 1);
                for obstacle in &obstacles {
                    let (qs, call) = match decompose_obstacle(&ctx, obstacle, &state, &mut ids) {
                        Ok(v) => v,
                        Err(e) => return rec.abort(e),
                    };
                    calls.push(call);
                    for q in &qs {
                        for k in 0..config.hypotheses_per_query {
                            let (h, call) = match generate_hypothesis(&ctx, q, &state, &mut ids, k)
                            {
                                Ok(v) => v,
                                Err(e) => return rec.abort(e),
                            };
                            calls.push(call);
                            hypotheses.push(h);
                        }
                    }
                    queries.extend(qs);
                }
            }

            let next = match state.enrich(&obstacles, queries.clone(), hypotheses.clone()) {
                Ok(s) => s,
                Err(e) => return rec.abort(QsrError::State(e)),
            };
            rec.push(TraceRecord {
                round: t + 1,
                obstacles,
                queries_added: queries,
                hypotheses_added: hypotheses,
                state_size_after: next.size(),
                model_calls: calls,
                fusion: None,
            })?;
            state = next;
            rec.sink.observe_state(&state);
        }
        reason
    };

    let (conclusion, call) = match synthesize(&ctx, &state, &case.task) {
        Ok(v) => v,
        Err(e) => return rec.abort(e),
    };
    rec.attach(call);
    rec.flush()?;

    Ok(RunResult {
        conclusion,
        trace: rec.written,
        termination_reason: reason,
        rounds_executed: rounds,
        final_state: Some(state),
    })
}
