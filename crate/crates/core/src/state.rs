//! Domain types shared by every stage, and the append-only reasoning state.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{PromptKind, TokenSource};

/// Opaque, engine-generated (or case-supplied) identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ItemId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl core::borrow::Borrow<str> for ItemId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("structural validation failed: {0}")]
    Structural(String),
    #[error("dangling link: {child} references unknown {parent_kind} {parent}")]
    DanglingLink {
        child: ItemId,
        parent_kind: &'static str,
        parent: ItemId,
    },
    #[error("id collision: {0} already present in the state")]
    IdCollision(ItemId),
    #[error("round mismatch on {id}: expected round {expected}, found {found}")]
    RoundMismatch {
        id: ItemId,
        expected: u32,
        found: u32,
    },
}

fn structural(msg: impl Into<String>) -> StateError {
    StateError::Structural(msg.into())
}

/// One segment of the raw narrative, in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeUnit {
    pub id: ItemId,
    pub text: String,
    pub ordinal: usize,
}

/// Checks id uniqueness and that ordinals run 0..n-1 in list order.
pub fn validate_narrative(units: &[NarrativeUnit]) -> Result<(), StateError> {
    let mut seen = BTreeSet::new();
    for (i, unit) in units.iter().enumerate() {
        if !seen.insert(&unit.id) {
            return Err(structural(format!(
                "duplicate narrative unit id {}",
                unit.id
            )));
        }
        if unit.ordinal != i {
            return Err(structural(format!(
                "narrative unit {} has ordinal {} at position {i}",
                unit.id, unit.ordinal
            )));
        }
    }
    Ok(())
}

/// A core event of the narrative skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneEvent {
    pub id: ItemId,
    pub description: String,
    pub ordinal: usize,
    /// Narrative units the event was extracted from; feeds the alignment repair rule.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub source_unit_ids: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Action,
    ObjectState,
    Location,
    EvidentiaryDescriptor,
    Other,
}

/// A descriptive detail (action, object state, location, evidence) to be bound to events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: ItemId,
    pub description: String,
    pub kind: AttributeKind,
    pub source_unit_ids: BTreeSet<ItemId>,
}

/// Total mapping from attribute id to a non-empty set of event ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub entries: BTreeMap<ItemId, BTreeSet<ItemId>>,
}

impl AlignmentMap {
    pub fn validate(
        &self,
        backbone: &[BackboneEvent],
        attributes: &[Attribute],
    ) -> Result<(), StateError> {
        let events: BTreeSet<&ItemId> = backbone.iter().map(|e| &e.id).collect();
        if self.entries.len() != attributes.len() {
            return Err(structural(format!(
                "alignment covers {} attributes, expected {}",
                self.entries.len(),
                attributes.len()
            )));
        }
        for attr in attributes {
            let targets = self.entries.get(&attr.id).ok_or_else(|| {
                structural(format!("attribute {} missing from alignment", attr.id))
            })?;
            if targets.is_empty() {
                return Err(structural(format!(
                    "attribute {} aligned to no event",
                    attr.id
                )));
            }
            if let Some(bad) = targets.iter().find(|e| !events.contains(e)) {
                return Err(StateError::DanglingLink {
                    child: attr.id.clone(),
                    parent_kind: "event",
                    parent: bad.clone(),
                });
            }
        }
        Ok(())
    }

    /// Builds `d_i = (s_i, {a | s_i ∈ Φ(a)})` for every event, in event order.
    pub fn aligned_units(
        &self,
        backbone: &[BackboneEvent],
        attributes: &[Attribute],
    ) -> Vec<AlignedUnit> {
        backbone
            .iter()
            .map(|event| AlignedUnit {
                event: event.clone(),
                attributes: attributes
                    .iter()
                    .filter(|a| {
                        self.entries
                            .get(&a.id)
                            .is_some_and(|targets| targets.contains(&event.id))
                    })
                    .cloned()
                    .collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedUnit {
    pub event: BackboneEvent,
    pub attributes: Vec<Attribute>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Conflict,
    Doubt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyComment {
    pub unit_id: ItemId,
    pub verdict: Verdict,
    pub note: String,
    #[serde(default)]
    pub referenced_unit_ids: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselinePair {
    pub unit: AlignedUnit,
    pub comment: ConsistencyComment,
}

/// The fused baseline: every aligned unit with exactly one consistency comment, in event order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineState {
    pub pairs: Vec<BaselinePair>,
}

impl BaselineState {
    pub fn validate(&self) -> Result<(), StateError> {
        if self.pairs.is_empty() {
            return Err(structural("baseline has no aligned units"));
        }
        let mut events = BTreeSet::new();
        let mut attrs = BTreeSet::new();
        for (i, pair) in self.pairs.iter().enumerate() {
            let event = &pair.unit.event;
            if !events.insert(&event.id) {
                return Err(structural(format!("duplicate event id {}", event.id)));
            }
            if event.ordinal != i {
                return Err(structural(format!(
                    "event {} has ordinal {} at position {i}",
                    event.id, event.ordinal
                )));
            }
            if pair.comment.unit_id != event.id {
                return Err(structural(format!(
                    "comment for {} attached to unit {}",
                    pair.comment.unit_id, event.id
                )));
            }
            if pair.comment.verdict != Verdict::Consistent && pair.comment.note.trim().is_empty() {
                return Err(structural(format!(
                    "{:?} comment on {} has an empty note",
                    pair.comment.verdict, event.id
                )));
            }
            for attr in &pair.unit.attributes {
                attrs.insert(&attr.id);
            }
        }
        for pair in &self.pairs {
            if let Some(bad) = pair
                .comment
                .referenced_unit_ids
                .iter()
                .find(|r| !events.contains(r))
            {
                return Err(StateError::DanglingLink {
                    child: pair.unit.event.id.clone(),
                    parent_kind: "event",
                    parent: bad.clone(),
                });
            }
            if let Some(clash) = pair.unit.attributes.iter().find(|a| events.contains(&a.id)) {
                return Err(StateError::IdCollision(clash.id.clone()));
            }
        }
        Ok(())
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.comment.verdict == verdict)
            .count()
    }

    /// Distinct attribute ids carried by the aligned units.
    pub fn attribute_ids(&self) -> BTreeSet<ItemId> {
        self.pairs
            .iter()
            .flat_map(|p| p.unit.attributes.iter().map(|a| a.id.clone()))
            .collect()
    }

    fn item_ids(&self) -> BTreeSet<ItemId> {
        let mut ids = self.attribute_ids();
        ids.extend(self.pairs.iter().map(|p| p.unit.event.id.clone()));
        ids
    }
}

/// A task dimension label. Closed set with an escape hatch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum TaskDimension {
    Suspect,
    Motive,
    ModusOperandi,
    Answer,
    Other(String),
}

impl TaskDimension {
    pub fn label(&self) -> &str {
        match self {
            Self::Suspect => "Suspect",
            Self::Motive => "Motive",
            Self::ModusOperandi => "ModusOperandi",
            Self::Answer => "Answer",
            Self::Other(label) => label,
        }
    }
}

impl From<String> for TaskDimension {
    fn from(s: String) -> Self {
        let folded: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match folded.as_str() {
            "suspect" | "perpetrator" | "culprit" => Self::Suspect,
            "motive" => Self::Motive,
            "modusoperandi" | "modus" | "method" => Self::ModusOperandi,
            "answer" => Self::Answer,
            _ => Self::Other(s),
        }
    }
}

impl From<TaskDimension> for String {
    fn from(d: TaskDimension) -> Self {
        d.label().to_string()
    }
}

impl fmt::Display for TaskDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub dimensions: Vec<TaskDimension>,
    pub instruction: String,
}

impl Task {
    pub fn validate(&self) -> Result<(), StateError> {
        if self.dimensions.is_empty() {
            return Err(structural("task declares no dimensions"));
        }
        let unique: BTreeSet<_> = self.dimensions.iter().collect();
        if unique.len() != self.dimensions.len() {
            return Err(structural("task dimensions are not unique"));
        }
        Ok(())
    }

    pub fn declares(&self, dim: &TaskDimension) -> bool {
        self.dimensions.contains(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ObstacleType {
    MissingLink,
    Ambiguity,
    MotiveGap,
    Other(String),
}

impl From<String> for ObstacleType {
    fn from(s: String) -> Self {
        let folded: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match folded.as_str() {
            "missinglink" => Self::MissingLink,
            "ambiguity" => Self::Ambiguity,
            "motivegap" => Self::MotiveGap,
            _ => Self::Other(s),
        }
    }
}

impl From<ObstacleType> for String {
    fn from(t: ObstacleType) -> Self {
        match t {
            ObstacleType::MissingLink => "MissingLink".into(),
            ObstacleType::Ambiguity => "Ambiguity".into(),
            ObstacleType::MotiveGap => "MotiveGap".into(),
            ObstacleType::Other(label) => label,
        }
    }
}

/// A missing or underspecified premise: `(type, blocked dimension, requirement)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: ItemId,
    pub obstacle_type: ObstacleType,
    pub blocked_dimension: TaskDimension,
    pub requirement: String,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItem {
    pub id: ItemId,
    pub obstacle_id: ItemId,
    pub question: String,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportStatus {
    Supported,
    Unsupported,
    Flagged,
}

impl SupportStatus {
    /// Flagged wins; otherwise the presence of evidence citations decides.
    pub fn classify(flagged: bool, has_citations: bool) -> Self {
        match (flagged, has_citations) {
            (true, _) => Self::Flagged,
            (false, true) => Self::Supported,
            (false, false) => Self::Unsupported,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisItem {
    pub id: ItemId,
    pub query_id: ItemId,
    pub statement: String,
    pub support_status: SupportStatus,
    /// State items the hypothesis rests on. Empty means no direct evidence.
    #[serde(default)]
    pub citations: Vec<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<ItemId>,
    pub round: u32,
}

impl HypothesisItem {
    /// Not directly supported by evidence. Overlaps with `Flagged` when a
    /// flagged hypothesis carries no citations.
    pub fn is_unsupported(&self) -> bool {
        self.support_status == SupportStatus::Unsupported
            || (self.support_status == SupportStatus::Flagged && self.citations.is_empty())
    }
}

/// Item counts by kind; monotone across the rounds of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSize {
    pub baseline_units: usize,
    pub attributes: usize,
    pub queries: usize,
    pub hypotheses: usize,
}

impl StateSize {
    pub fn total(&self) -> usize {
        self.baseline_units + self.attributes + self.queries + self.hypotheses
    }

    /// Component-wise `self <= later`.
    pub fn dominated_by(&self, later: &StateSize) -> bool {
        self.baseline_units <= later.baseline_units
            && self.attributes <= later.attributes
            && self.queries <= later.queries
            && self.hypotheses <= later.hypotheses
    }
}

/// The working state of a run. Grows only through [`ReasoningState::enrich`], which returns a new value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningState {
    pub baseline: BaselineState,
    pub queries: Vec<QueryItem>,
    pub hypotheses: Vec<HypothesisItem>,
    pub round: u32,
}

impl ReasoningState {
    /// Starts from the fused baseline at round 0.
    pub fn new(baseline: BaselineState) -> Result<Self, StateError> {
        baseline.validate()?;
        Ok(Self {
            baseline,
            queries: Vec::new(),
            hypotheses: Vec::new(),
            round: 0,
        })
    }

    pub fn size(&self) -> StateSize {
        StateSize {
            baseline_units: self.baseline.pairs.len(),
            attributes: self.baseline.attribute_ids().len(),
            queries: self.queries.len(),
            hypotheses: self.hypotheses.len(),
        }
    }

    /// Every id held by the state: events, attributes, queries, hypotheses.
    pub fn item_ids(&self) -> BTreeSet<ItemId> {
        let mut ids = self.baseline.item_ids();
        ids.extend(self.queries.iter().map(|q| q.id.clone()));
        ids.extend(self.hypotheses.iter().map(|h| h.id.clone()));
        ids
    }

    pub fn hypothesis(&self, id: &str) -> Option<&HypothesisItem> {
        self.hypotheses.iter().find(|h| h.id.as_str() == id)
    }

    /// The next state: everything so far plus this round's queries and hypotheses.
    ///
    /// `obstacles` is the round's obstacle set, against which query parents
    /// resolve. Obstacles are not stored in the state.
    pub fn enrich(
        &self,
        obstacles: &[Obstacle],
        queries: Vec<QueryItem>,
        hypotheses: Vec<HypothesisItem>,
    ) -> Result<Self, StateError> {
        let next_round = self.round + 1;
        let mut ids = self.item_ids();
        let obstacle_ids: BTreeSet<&ItemId> = obstacles.iter().map(|o| &o.id).collect();
        let prior_hypotheses: BTreeSet<&ItemId> = self.hypotheses.iter().map(|h| &h.id).collect();

        for q in &queries {
            if q.round != next_round {
                return Err(StateError::RoundMismatch {
                    id: q.id.clone(),
                    expected: next_round,
                    found: q.round,
                });
            }
            if !obstacle_ids.contains(&q.obstacle_id) {
                return Err(StateError::DanglingLink {
                    child: q.id.clone(),
                    parent_kind: "obstacle",
                    parent: q.obstacle_id.clone(),
                });
            }
            if q.question.trim().is_empty() {
                return Err(structural(format!("query {} has an empty question", q.id)));
            }
            if !ids.insert(q.id.clone()) {
                return Err(StateError::IdCollision(q.id.clone()));
            }
        }
        let query_ids: BTreeSet<&ItemId> =
            self.queries.iter().chain(&queries).map(|q| &q.id).collect();
        for h in &hypotheses {
            if h.round != next_round {
                return Err(StateError::RoundMismatch {
                    id: h.id.clone(),
                    expected: next_round,
                    found: h.round,
                });
            }
            if !query_ids.contains(&h.query_id) {
                return Err(StateError::DanglingLink {
                    child: h.id.clone(),
                    parent_kind: "query",
                    parent: h.query_id.clone(),
                });
            }
            if let Some(prev) = &h.supersedes {
                if !prior_hypotheses.contains(prev) {
                    return Err(StateError::DanglingLink {
                        child: h.id.clone(),
                        parent_kind: "earlier hypothesis",
                        parent: prev.clone(),
                    });
                }
            }
            if h.statement.trim().is_empty() {
                return Err(structural(format!(
                    "hypothesis {} has an empty statement",
                    h.id
                )));
            }
            if !ids.insert(h.id.clone()) {
                return Err(StateError::IdCollision(h.id.clone()));
            }
        }

        let mut next = self.clone();
        next.queries.extend(queries);
        next.hypotheses.extend(hypotheses);
        next.round = next_round;
        Ok(next)
    }

    /// Re-checks every structural invariant; used when replaying persisted states.
    pub fn validate(&self) -> Result<(), StateError> {
        self.baseline.validate()?;
        let mut ids = self.baseline.item_ids();
        let mut query_ids = BTreeSet::new();
        for q in &self.queries {
            if q.round == 0 || q.round > self.round {
                return Err(StateError::RoundMismatch {
                    id: q.id.clone(),
                    expected: self.round,
                    found: q.round,
                });
            }
            if !ids.insert(q.id.clone()) {
                return Err(StateError::IdCollision(q.id.clone()));
            }
            query_ids.insert(&q.id);
        }
        let mut rounds: BTreeMap<&ItemId, u32> = BTreeMap::new();
        for h in &self.hypotheses {
            if h.round == 0 || h.round > self.round {
                return Err(StateError::RoundMismatch {
                    id: h.id.clone(),
                    expected: self.round,
                    found: h.round,
                });
            }
            if !query_ids.contains(&h.query_id) {
                return Err(StateError::DanglingLink {
                    child: h.id.clone(),
                    parent_kind: "query",
                    parent: h.query_id.clone(),
                });
            }
            if let Some(prev) = &h.supersedes {
                match rounds.get(prev) {
                    Some(&r) if r < h.round => {}
                    _ => {
                        return Err(StateError::DanglingLink {
                            child: h.id.clone(),
                            parent_kind: "earlier hypothesis",
                            parent: prev.clone(),
                        })
                    }
                }
            }
            if !ids.insert(h.id.clone()) {
                return Err(StateError::IdCollision(h.id.clone()));
            }
            rounds.insert(&h.id, h.round);
        }
        Ok(())
    }
}

/// `y`: one answer per task dimension.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conclusion {
    pub per_dimension: BTreeMap<TaskDimension, String>,
    #[serde(default)]
    pub rationale: String,
    /// Supporting-fact identifiers, when the task asks for them (multi-hop QA).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub support: Vec<String>,
}

impl Conclusion {
    pub fn answer(&self, dim: &TaskDimension) -> Option<&str> {
        self.per_dimension.get(dim).map(String::as_str)
    }
}

/// Accounting entry for a single model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCall {
    pub kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cache_hit: bool,
    pub token_source: TokenSource,
    pub attempts: u32,
    /// Wall-clock latency; excluded from golden comparisons.
    #[serde(default)]
    pub latency_ms: u64,
}

/// Phase-one outcome, carried by the round-0 trace record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSnapshot {
    pub baseline: BaselineState,
    pub conflicts: usize,
    pub doubts: usize,
    pub gated: bool,
}

/// One round's obstacles, new queries and hypotheses, resulting state size, and the calls that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u32,
    pub obstacles: Vec<Obstacle>,
    pub queries_added: Vec<QueryItem>,
    pub hypotheses_added: Vec<HypothesisItem>,
    pub state_size_after: StateSize,
    pub model_calls: Vec<ModelCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-if")]
    NoIF,
    #[serde(rename = "self-assessment-only")]
    SelfAssessmentOnly,
    #[serde(rename = "no-awareness")]
    NoAwareness,
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "cot")]
    CoT,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoIF,
        Variant::SelfAssessmentOnly,
        Variant::NoAwareness,
        Variant::Direct,
        Variant::CoT,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoIF => "no-if",
            Self::SelfAssessmentOnly => "self-assessment-only",
            Self::NoAwareness => "no-awareness",
            Self::Direct => "direct",
            Self::CoT => "cot",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label() == label)
    }

    /// Single-call variants that skip fusion and the reasoning loop.
    pub fn is_single_call(self) -> bool {
        matches!(self, Self::Direct | Self::CoT)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const DEFAULT_T_MAX: u32 = 3;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub t_max: u32,
    pub gate_conflict_threshold: u32,
    pub gate_doubt_threshold: u32,
    pub variant: Variant,
    pub temperature: f64,
    /// Hypotheses generated per sub-query.
    pub hypotheses_per_query: u32,
    /// Attempts per model call before a transport or schema failure is surfaced.
    pub max_attempts: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            gate_conflict_threshold: 0,
            gate_doubt_threshold: 0,
            variant: Variant::Full,
            temperature: DEFAULT_TEMPERATURE,
            hypotheses_per_query: 1,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

impl RunConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if self.t_max == 0 {
            return Err(structural("t_max must be at least 1"));
        }
        if self.hypotheses_per_query == 0 {
            return Err(structural("hypotheses_per_query must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(structural("max_attempts must be at least 1"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(structural("temperature must be finite and non-negative"));
        }
        Ok(())
    }
}
