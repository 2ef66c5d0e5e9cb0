//! Scoring: suspect accuracy, semantic recall by greedy proposition matching,
//! clue coverage, QA exact match and supporting-fact F1, normalized cost, and
//! the hypothesis reliability audit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::case::{CaseSpec, Gold, Suspect};
use crate::cost::{cost_summary, CostMode};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::engine::{Context, RunResult};
use crate::json;
use crate::model::{BackendError, CallError, PromptKind};
use crate::prompt;
use crate::state::{Conclusion, ReasoningState, SupportStatus, TaskDimension, TraceRecord};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] BackendError),
    #[error("proposition decomposition failed: {0}")]
    Call(#[from] CallError),
    #[error("missing gold: {0}")]
    MissingGold(String),
    #[error("cost baseline {0} is missing")]
    MissingBaseline(String),
    #[error("cost baseline {0} has a zero-token run")]
    ZeroBaseline(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropositionSource {
    Prediction,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicProposition {
    pub id: String,
    pub text: String,
    pub source: PropositionSource,
}

impl AtomicProposition {
    /// Wraps already-decomposed texts, skipping blanks.
    pub fn from_texts<S: AsRef<str>>(
        prefix: &str,
        texts: &[S],
        source: PropositionSource,
    ) -> Vec<Self> {
        texts
            .iter()
            .map(|t| t.as_ref().trim())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(i, t)| Self {
                id: format!("{prefix}{i}"),
                text: t.to_string(),
                source,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if (0.0..=1.0).contains(&self.threshold) {
            Ok(())
        } else {
            Err(EvalError::InvalidInput(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub prediction: String,
    pub reference: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub recall: f64,
    pub unmatched_references: Vec<String>,
}

/// Greedy one-to-one matching on a similarity matrix with rows as
/// predictions and columns as references. Candidates are visited by
/// similarity descending, then prediction index, then reference index.
/// Returns accepted `(pred, ref, similarity)` triples in acceptance order.
pub fn greedy_pairs(sims: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for (p, row) in sims.iter().enumerate() {
        for (r, &s) in row.iter().enumerate() {
            if s >= threshold {
                cands.push((p, r, s));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = BTreeSet::new();
    let mut used_r = BTreeSet::new();
    let mut out = Vec::new();
    for (p, r, s) in cands {
        if !used_p.contains(&p) && !used_r.contains(&r) {
            used_p.insert(p);
            used_r.insert(r);
            out.push((p, r, s));
        }
    }
    out
}

/// Builds a report from a precomputed matrix. Empty references give recall 1.0.
pub fn match_matrix(
    pred_ids: &[String],
    ref_ids: &[String],
    sims: &[Vec<f64>],
    config: &MatchConfig,
) -> Result<MatchReport, EvalError> {
    config.validate()?;
    if sims.len() != pred_ids.len() || sims.iter().any(|row| row.len() != ref_ids.len()) {
        return Err(EvalError::InvalidInput(
            "similarity matrix shape mismatch".into(),
        ));
    }
    if sims.iter().flatten().any(|s| s.is_nan()) {
        return Err(EvalError::InvalidInput("NaN similarity".into()));
    }
    let accepted = greedy_pairs(sims, config.threshold);
    let matched: BTreeSet<usize> = accepted.iter().map(|&(_, r, _)| r).collect();
    let recall = if ref_ids.is_empty() {
        1.0
    } else {
        matched.len() as f64 / ref_ids.len() as f64
    };
    Ok(MatchReport {
        pairs: accepted
            .into_iter()
            .map(|(p, r, s)| MatchedPair {
                prediction: pred_ids[p].clone(),
                reference: ref_ids[r].clone(),
                similarity: s,
            })
            .collect(),
        recall,
        unmatched_references: ref_ids
            .iter()
            .enumerate()
            .filter(|(i, _)| !matched.contains(i))
            .map(|(_, id)| id.clone())
            .collect(),
    })
}

fn embed_all(
    embedder: &dyn Embedder,
    props: &[AtomicProposition],
) -> Result<Vec<EmbeddingVector>, EvalError> {
    props
        .iter()
        .map(|p| embedder.embed(&p.text).map_err(EvalError::from))
        .collect()
}

pub fn greedy_match(
    embedder: &dyn Embedder,
    preds: &[AtomicProposition],
    refs: &[AtomicProposition],
    config: &MatchConfig,
) -> Result<MatchReport, EvalError> {
    let pv = embed_all(embedder, preds)?;
    let rv = embed_all(embedder, refs)?;
    let sims: Vec<Vec<f64>> = pv
        .iter()
        .map(|p| rv.iter().map(|r| p.cosine(r)).collect())
        .collect();
    let pred_ids: Vec<String> = preds.iter().map(|p| p.id.clone()).collect();
    let ref_ids: Vec<String> = refs.iter().map(|p| p.id.clone()).collect();
    match_matrix(&pred_ids, &ref_ids, &sims, config)
}

/// Rule-based decomposition: one proposition per sentence or semicolon clause.
pub fn split_propositions(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', ';', '\n'])
        .map(str::trim)
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .map(String::from)
        .collect()
}

#[derive(Deserialize)]
struct PropositionsReply {
    propositions: Vec<String>,
}

/// Splits `text` into atomic claims. With a context the model does the
/// splitting; without one, or if its reply is unusable, sentences are split
/// by rule.
pub fn decompose_propositions(
    ctx: Option<&Context<'_>>,
    text: &str,
    source: PropositionSource,
    id_prefix: &str,
) -> Result<Vec<AtomicProposition>, EvalError> {
    if text.trim().is_empty() {
        return Err(EvalError::InvalidInput(
            "cannot decompose blank text".into(),
        ));
    }
    let mut texts = Vec::new();
    if let Some(ctx) = ctx {
        let rendered = ctx.render(prompt::PROPOSITIONS, &[("text", text)])?;
        let parsed = ctx.call(PromptKind::Propositions, rendered, 0, None, |raw| {
            let reply: PropositionsReply = json::from_reply(raw)?;
            Ok(reply.propositions)
        });
        match parsed {
            Ok(resp) => texts = resp.parsed,
            Err(CallError::Parse { reason, .. }) => {
                log::warn!("proposition reply unusable ({reason}); splitting by rule")
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut props = AtomicProposition::from_texts(id_prefix, &texts, source);
    if props.is_empty() {
        props = AtomicProposition::from_texts(id_prefix, &split_propositions(text), source);
    }
    if props.is_empty() {
        props = AtomicProposition::from_texts(id_prefix, &[text], source);
    }
    Ok(props)
}

const HONORIFICS: &[&str] = &[
    "mr",
    "mrs",
    "ms",
    "miss",
    "dr",
    "detective",
    "inspector",
    "sir",
    "lady",
    "lord",
    "madam",
    "professor",
    "prof",
    "captain",
    "colonel",
];

/// Case-folds, drops punctuation, a leading article and leading honorifics.
pub fn normalize_name(name: &str) -> String {
    let lowered = name.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    while let Some(first) = words.first() {
        if words.len() > 1 && (*first == "the" || HONORIFICS.contains(first)) {
            words.remove(0);
        } else {
            break;
        }
    }
    words.join(" ")
}

pub fn suspect_matches(predicted: &str, gold: &Suspect) -> bool {
    let p = normalize_name(predicted);
    !p.is_empty()
        && core::iter::once(&gold.name)
            .chain(gold.aliases.iter())
            .any(|n| normalize_name(n) == p)
}

pub fn score_suspect(prediction: &Conclusion, gold: &Suspect) -> bool {
    match prediction.answer(&TaskDimension::Suspect) {
        Some(s) => suspect_matches(s, gold),
        None => {
            log::warn!("conclusion has no Suspect answer; scored as incorrect");
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub suspect_correct: bool,
    pub motive_recall: f64,
    pub modus_recall: f64,
    pub clue_coverage: f64,
    pub cost_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaScore {
    pub case_id: String,
    pub exact_match: bool,
    pub support_f1: f64,
    pub cost_tokens: u64,
}

/// Texts a run explored: every state item plus the conclusion.
pub fn explored_texts(state: Option<&ReasoningState>, conclusion: &Conclusion) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(s) = state {
        for pair in &s.baseline.pairs {
            out.push(pair.unit.event.description.clone());
            out.extend(pair.unit.attributes.iter().map(|a| a.description.clone()));
            out.push(pair.comment.note.clone());
        }
        out.extend(s.queries.iter().map(|q| q.question.clone()));
        out.extend(s.hypotheses.iter().map(|h| h.statement.clone()));
    }
    out.extend(conclusion.per_dimension.values().cloned());
    out.push(conclusion.rationale.clone());
    out.extend(conclusion.support.iter().cloned());
    out.into_iter()
        .flat_map(|t| split_propositions(&t))
        .collect()
}

fn dimension_recall(
    embedder: &dyn Embedder,
    ctx: Option<&Context<'_>>,
    answer: Option<&str>,
    gold: &[String],
    prefix: &str,
    config: &MatchConfig,
) -> Result<f64, EvalError> {
    let refs = AtomicProposition::from_texts("r", gold, PropositionSource::Reference);
    let preds = match answer {
        Some(a) if !a.trim().is_empty() => {
            decompose_propositions(ctx, a, PropositionSource::Prediction, prefix)?
        }
        _ => Vec::new(),
    };
    Ok(greedy_match(embedder, &preds, &refs, config)?.recall)
}

/// Scores a detective run. `ctx`, when given, decomposes predicted answers
/// through the model.
pub fn score_case(
    embedder: &dyn Embedder,
    ctx: Option<&Context<'_>>,
    result: &RunResult,
    case: &CaseSpec,
    config: &MatchConfig,
) -> Result<CaseScore, EvalError> {
    let Gold::Detective {
        suspect,
        motive,
        modus,
        critical_clues,
    } = &case.gold
    else {
        return Err(EvalError::MissingGold(format!(
            "{} has no detective gold",
            case.case_id
        )));
    };
    let c = &result.conclusion;
    let motive_recall = dimension_recall(
        embedder,
        ctx,
        c.answer(&TaskDimension::Motive),
        motive,
        "pm",
        config,
    )?;
    let modus_recall = dimension_recall(
        embedder,
        ctx,
        c.answer(&TaskDimension::ModusOperandi),
        modus,
        "po",
        config,
    )?;
    let explored = explored_texts(result.final_state.as_ref(), c);
    let cands = AtomicProposition::from_texts("x", &explored, PropositionSource::Prediction);
    let clues = AtomicProposition::from_texts("c", critical_clues, PropositionSource::Reference);
    let clue_coverage = greedy_match(embedder, &cands, &clues, config)?.recall;
    Ok(CaseScore {
        case_id: case.case_id.clone(),
        suspect_correct: score_suspect(c, suspect),
        motive_recall,
        modus_recall,
        clue_coverage,
        cost_tokens: cost_summary(&result.trace, CostMode::default()).total_tokens(),
    })
}

/// Lowercase, drop punctuation and articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn support_f1(predicted: &[String], gold: &[String]) -> f64 {
    let p: BTreeSet<&str> = predicted.iter().map(|s| s.trim()).collect();
    let g: BTreeSet<&str> = gold.iter().map(|s| s.trim()).collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let hit = p.intersection(&g).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let precision = hit / p.len() as f64;
    let recall = hit / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match against any gold answer, and supporting-fact F1.
pub fn score_qa(
    prediction: &str,
    gold_answers: &[String],
    gold_support: &[String],
    predicted_support: &[String],
) -> (bool, f64) {
    let p = normalize_answer(prediction);
    let em = gold_answers.iter().any(|g| normalize_answer(g) == p);
    (em, support_f1(predicted_support, gold_support))
}

pub fn score_qa_case(result: &RunResult, case: &CaseSpec) -> Result<QaScore, EvalError> {
    let Gold::Qa { answers, support } = &case.gold else {
        return Err(EvalError::MissingGold(format!(
            "{} has no QA gold",
            case.case_id
        )));
    };
    let c = &result.conclusion;
    let answer = c.answer(&TaskDimension::Answer).unwrap_or_default();
    let (exact_match, support_f1) = score_qa(answer, answers, support, &c.support);
    Ok(QaScore {
        case_id: case.case_id.clone(),
        exact_match,
        support_f1,
        cost_tokens: cost_summary(&result.trace, CostMode::default()).total_tokens(),
    })
}

/// Mean over runs of `method / baseline` token ratios. A baseline with a
/// single run is compared against every run of the other methods; otherwise
/// runs are paired by index.
pub fn normalized_cost(
    method_costs: &BTreeMap<String, Vec<u64>>,
    baseline: &str,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let base = method_costs
        .get(baseline)
        .filter(|b| !b.is_empty())
        .ok_or_else(|| EvalError::MissingBaseline(baseline.to_string()))?;
    if base.contains(&0) {
        return Err(EvalError::ZeroBaseline(baseline.to_string()));
    }
    let mut out = BTreeMap::new();
    for (method, runs) in method_costs {
        if method == baseline {
            out.insert(method.clone(), 1.0);
            continue;
        }
        if runs.is_empty() {
            return Err(EvalError::InvalidInput(format!("{method} has no runs")));
        }
        if base.len() != 1 && base.len() != runs.len() {
            return Err(EvalError::InvalidInput(format!(
                "{method} has {} runs but the baseline has {}",
                runs.len(),
                base.len()
            )));
        }
        let total: f64 = runs
            .iter()
            .enumerate()
            .map(|(i, &t)| t as f64 / base[if base.len() == 1 { 0 } else { i }] as f64)
            .sum();
        out.insert(method.clone(), total / runs.len() as f64);
    }
    Ok(out)
}

/// Hypothesis reliability over a set of runs. Rates are percentages and are
/// `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub hypotheses: usize,
    pub unsupported: usize,
    pub flagged: usize,
    pub corrected: usize,
    pub unsupported_rate: Option<f64>,
    pub flagged_rate: Option<f64>,
    pub correction_within_flagged_rate: Option<f64>,
}

fn pct(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| 100.0 * n as f64 / d as f64)
}

/// Each item of `runs` is one run's trace. A flagged hypothesis counts as
/// corrected when a later hypothesis in the same run supersedes it.
pub fn reliability_audit<'a>(
    runs: impl IntoIterator<Item = &'a [TraceRecord]>,
) -> ReliabilityReport {
    let (mut total, mut unsupported, mut flagged, mut corrected) = (0, 0, 0, 0);
    for trace in runs {
        let hyps: Vec<_> = trace
            .iter()
            .flat_map(|r| r.hypotheses_added.iter())
            .collect();
        let superseded: BTreeSet<&str> = hyps
            .iter()
            .filter_map(|h| h.supersedes.as_ref().map(|s| s.as_str()))
            .collect();
        for h in &hyps {
            total += 1;
            if h.is_unsupported() {
                unsupported += 1;
            }
            if h.support_status == SupportStatus::Flagged {
                flagged += 1;
                if superseded.contains(h.id.as_str()) {
                    corrected += 1;
                }
            }
        }
    }
    ReliabilityReport {
        hypotheses: total,
        unsupported,
        flagged,
        corrected,
        unsupported_rate: pct(unsupported, total),
        flagged_rate: pct(flagged, total),
        correction_within_flagged_rate: pct(corrected, flagged),
    }
}

/// Mean and sample standard deviation; a single value has deviation 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, libm::sqrt(var)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashProjectionEmbedder;
    use crate::state::{HypothesisItem, ItemId};
    use alloc::vec;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    /// Best achievable number of matched references over all one-to-one
    /// assignments with similarity >= threshold.
    fn oracle(sims: &[Vec<f64>], t: f64, p: usize, used: u32) -> usize {
        if p == sims.len() {
            return 0;
        }
        let mut best = oracle(sims, t, p + 1, used);
        for (r, &s) in sims[p].iter().enumerate() {
            if s >= t && used & (1 << r) == 0 {
                best = best.max(1 + oracle(sims, t, p + 1, used | (1 << r)));
            }
        }
        best
    }

    proptest::proptest! {
        #[test]
        fn greedy_is_a_maximal_matching(
            sims in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 0..6), 0..6)
        ) {
            let refs = sims.first().map_or(0, Vec::len);
            let sims: Vec<Vec<f64>> = sims.into_iter().map(|mut r| { r.resize(refs, 0.0); r }).collect();
            let pairs = greedy_pairs(&sims, 0.5);
            let mut ps = BTreeSet::new();
            let mut rs = BTreeSet::new();
            for &(p, r, s) in &pairs {
                proptest::prop_assert!(s >= 0.5 && ps.insert(p) && rs.insert(r));
            }
            // no unused pair above threshold remains, so at least half the optimum
            for (p, row) in sims.iter().enumerate() {
                for (r, &s) in row.iter().enumerate() {
                    proptest::prop_assert!(s < 0.5 || ps.contains(&p) || rs.contains(&r));
                }
            }
            let best = oracle(&sims, 0.5, 0, 0);
            proptest::prop_assert!(pairs.len() <= best && 2 * pairs.len() >= best);
        }
    }

    #[test]
    fn default_threshold_is_half() {
        assert_eq!(MatchConfig::default().threshold, 0.5);
        assert!(MatchConfig { threshold: 1.5 }.validate().is_err());
    }

    #[test]
    fn greedy_picks_best_first() {
        let sims = vec![vec![0.9, 0.6], vec![0.4, 0.7]];
        let r = match_matrix(&ids("p", 2), &ids("r", 2), &sims, &MatchConfig::default()).unwrap();
        let pairs: Vec<_> = r
            .pairs
            .iter()
            .map(|p| (p.prediction.as_str(), p.reference.as_str()))
            .collect();
        assert_eq!(pairs, vec![("p0", "r0"), ("p1", "r1")]);
        assert_eq!(r.recall, 1.0);
        assert_eq!(oracle(&sims, 0.5, 0, 0), 2);
    }

    #[test]
    fn greedy_is_not_optimal_witness() {
        let sims = vec![vec![0.9, 0.8], vec![0.85, 0.3]];
        let r = match_matrix(&ids("p", 2), &ids("r", 2), &sims, &MatchConfig::default()).unwrap();
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.unmatched_references, vec!["r1".to_string()]);
        assert_eq!(oracle(&sims, 0.5, 0, 0) as f64 / 2.0, 1.0);
    }

    #[test]
    fn below_threshold_and_empty_refs() {
        let sims = vec![vec![0.1, 0.49]];
        let r = match_matrix(&ids("p", 1), &ids("r", 2), &sims, &MatchConfig::default()).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.recall, 0.0);
        let r = match_matrix(&ids("p", 1), &[], &[vec![]], &MatchConfig::default()).unwrap();
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn ties_break_on_pred_then_ref() {
        let sims = vec![vec![0.7, 0.7], vec![0.7, 0.7]];
        let got = greedy_pairs(&sims, 0.5);
        assert_eq!(got, vec![(0, 0, 0.7), (1, 1, 0.7)]);
    }

    #[test]
    fn identical_texts_recall_one() {
        let e = HashProjectionEmbedder::default();
        let texts = [
            "He needed money to pay debts",
            "The will was changed last week",
        ];
        let preds = AtomicProposition::from_texts("p", &texts, PropositionSource::Prediction);
        let refs = AtomicProposition::from_texts("r", &texts, PropositionSource::Reference);
        let r = greedy_match(&e, &preds, &refs, &MatchConfig::default()).unwrap();
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn rule_split() {
        assert_eq!(split_propositions("A did x. B did y; C did z!").len(), 3);
        assert_eq!(split_propositions("single clause").len(), 1);
        let p = decompose_propositions(None, "single clause", PropositionSource::Prediction, "p")
            .unwrap();
        assert_eq!(p.len(), 1);
        assert!(decompose_propositions(None, " ", PropositionSource::Prediction, "p").is_err());
    }

    #[test]
    fn model_decomposition() {
        use crate::engine::Runtime;
        use crate::prompt::PromptTemplates;
        use crate::state::RunConfig;
        use crate::testing::ScriptModel;
        let mut m = ScriptModel::new();
        m.set(
            PromptKind::Propositions,
            -1,
            None,
            serde_json::json!({"propositions": ["The butler took the key.", "The butler entered at 8pm."]}),
        );
        let t = PromptTemplates::default();
        let rt = Runtime {
            model: &m,
            cache: None,
            templates: &t,
        };
        let ctx = rt.context("c", &RunConfig::default());
        let p = decompose_propositions(
            Some(&ctx),
            "The butler took the key and entered at 8pm.",
            PropositionSource::Prediction,
            "p",
        )
        .unwrap();
        assert_eq!(p.len(), 2);
        // garbage falls back to the rule splitter
        let mut m = ScriptModel::new();
        m.set_raw(PromptKind::Propositions, -1, None, vec!["nope".into()]);
        let rt = Runtime {
            model: &m,
            cache: None,
            templates: &t,
        };
        let ctx = rt.context("c", &RunConfig::default());
        let p = decompose_propositions(Some(&ctx), "One. Two.", PropositionSource::Prediction, "p")
            .unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn suspect_normalization() {
        let butler = Suspect {
            name: "butler".into(),
            aliases: vec![],
        };
        assert!(suspect_matches("The Butler", &butler));
        assert!(!suspect_matches("the gardener", &butler));
        let chen = Suspect {
            name: "Chen Wei".into(),
            aliases: vec!["Mr. Chen".into()],
        };
        assert!(suspect_matches("Mr. Chen", &chen));
        assert!(suspect_matches("chen wei", &chen));
        assert!(!suspect_matches("", &chen));
        let missing = Conclusion::default();
        assert!(!score_suspect(&missing, &butler));
    }

    #[test]
    fn qa_scoring() {
        let (em, f1) = score_qa("The Eiffel Tower", &["eiffel tower".into()], &[], &[]);
        assert!(em);
        assert_eq!(f1, 1.0);
        let f1 = support_f1(&["a".into(), "b".into()], &["b".into(), "c".into()]);
        assert!((f1 - 0.5).abs() < 1e-12);
        assert_eq!(support_f1(&["a".into()], &["a".into()]), 1.0);
        assert_eq!(support_f1(&[], &["a".into()]), 0.0);
    }

    #[test]
    fn cost_ratios() {
        let mut m = BTreeMap::new();
        m.insert("direct".to_string(), vec![1000, 1000, 1000]);
        m.insert("full".to_string(), vec![9200, 9200, 9200]);
        let t = normalized_cost(&m, "direct").unwrap();
        assert_eq!(t["direct"], 1.0);
        assert!((t["full"] - 9.2).abs() < 1e-9);

        let mut m = BTreeMap::new();
        m.insert("direct".to_string(), vec![100]);
        m.insert("x".to_string(), vec![200, 300, 400]);
        assert!((normalized_cost(&m, "direct").unwrap()["x"] - 3.0).abs() < 1e-12);

        m.insert("direct".to_string(), vec![0]);
        assert_eq!(
            normalized_cost(&m, "direct"),
            Err(EvalError::ZeroBaseline("direct".into()))
        );
        assert!(matches!(
            normalized_cost(&m, "cot"),
            Err(EvalError::MissingBaseline(_))
        ));
    }

    fn hyp(
        id: &str,
        status: SupportStatus,
        cites: bool,
        supersedes: Option<&str>,
        round: u32,
    ) -> HypothesisItem {
        HypothesisItem {
            id: ItemId::new(id),
            query_id: ItemId::new("q"),
            statement: "s".into(),
            support_status: status,
            citations: if cites {
                vec![ItemId::new("e0")]
            } else {
                vec![]
            },
            supersedes: supersedes.map(ItemId::new),
            round,
        }
    }

    fn rec(round: u32, hyps: Vec<HypothesisItem>) -> TraceRecord {
        TraceRecord {
            round,
            obstacles: vec![],
            queries_added: vec![],
            hypotheses_added: hyps,
            state_size_after: Default::default(),
            model_calls: vec![],
            fusion: None,
        }
    }

    #[test]
    fn audit_rates() {
        let none: Vec<&[TraceRecord]> = vec![];
        let r = reliability_audit(none);
        assert_eq!(r.unsupported_rate, None);

        let all_ok = vec![rec(
            1,
            vec![hyp("h1", SupportStatus::Supported, true, None, 1)],
        )];
        let r = reliability_audit([all_ok.as_slice()]);
        assert_eq!(
            (
                r.unsupported_rate,
                r.flagged_rate,
                r.correction_within_flagged_rate
            ),
            (Some(0.0), Some(0.0), None)
        );

        let fix = vec![
            rec(1, vec![hyp("h1", SupportStatus::Flagged, true, None, 1)]),
            rec(
                2,
                vec![hyp("h2", SupportStatus::Supported, true, Some("h1"), 2)],
            ),
        ];
        let r = reliability_audit([fix.as_slice()]);
        assert_eq!(r.correction_within_flagged_rate, Some(100.0));
        assert_eq!(r.flagged_rate, Some(50.0));

        // flagged with no citations is both flagged and unsupported
        let overlap = vec![rec(
            1,
            vec![hyp("h1", SupportStatus::Flagged, false, None, 1)],
        )];
        let r = reliability_audit([overlap.as_slice()]);
        assert_eq!((r.unsupported, r.flagged), (1, 1));
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[3.0]), Some((3.0, 0.0)));
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(m, 5.0);
        assert!((s - 2.138089935299395).abs() < 1e-12);
    }
}
