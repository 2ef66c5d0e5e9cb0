//! Information fusion: narrative → backbone + attributes → alignment →
//! per-unit consistency comments → baseline state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::Deserialize;

use crate::engine::Context;
use crate::json;
use crate::model::{CallError, PromptKind};
use crate::prompt;
use crate::state::{
    AlignedUnit, AlignmentMap, Attribute, AttributeKind, BackboneEvent, BaselinePair,
    BaselineState, ConsistencyComment, ItemId, ModelCall, NarrativeUnit, StateError, Variant,
    Verdict,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FusionError {
    #[error("narrative is empty")]
    EmptyInput,
    #[error("fusion model call failed: {0}")]
    Call(#[from] CallError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Result of phase one, with the gating metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionOutput {
    pub backbone: Vec<BackboneEvent>,
    pub attributes: Vec<Attribute>,
    pub alignment: AlignmentMap,
    pub baseline: BaselineState,
    pub conflicts: usize,
    pub doubts: usize,
    pub calls: Vec<ModelCall>,
}

#[derive(Deserialize)]
struct ExtractReply {
    events: Vec<EventReply>,
    #[serde(default)]
    attributes: Vec<AttributeReply>,
}

#[derive(Deserialize)]
struct EventReply {
    description: String,
    #[serde(default)]
    source_units: Vec<String>,
}

#[derive(Deserialize)]
struct AttributeReply {
    description: String,
    kind: AttributeKind,
    source_units: Vec<String>,
}

#[derive(Deserialize)]
struct AlignReply {
    assignments: Vec<Assignment>,
}

#[derive(Deserialize)]
struct Assignment {
    attribute: String,
    #[serde(default)]
    events: Vec<String>,
}

#[derive(Deserialize)]
struct VerifyReply {
    verdict: Verdict,
    #[serde(default)]
    note: String,
    #[serde(default)]
    references: Vec<String>,
}

fn check_sources(
    sources: &[String],
    known: &BTreeSet<&str>,
    what: &str,
) -> Result<BTreeSet<ItemId>, String> {
    sources
        .iter()
        .map(|s| {
            if known.contains(s.as_str()) {
                Ok(ItemId::new(s.as_str()))
            } else {
                Err(format!("{what} cites unknown narrative unit {s}"))
            }
        })
        .collect()
}

/// Splits the narrative into backbone events and attributes with one
/// `ExtractStructure` call.
pub fn decompose(
    ctx: &Context<'_>,
    narrative: &[NarrativeUnit],
) -> Result<(Vec<BackboneEvent>, Vec<Attribute>, ModelCall), FusionError> {
    if narrative.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let known: BTreeSet<&str> = narrative.iter().map(|u| u.id.as_str()).collect();
    let rendered = prompt::render_narrative(narrative);
    let text = ctx.render(prompt::EXTRACT_STRUCTURE, &[("narrative", &rendered)])?;
    let parse = |raw: &str| -> Result<(Vec<BackboneEvent>, Vec<Attribute>), String> {
        let reply: ExtractReply = json::from_reply(raw)?;
        if reply.events.is_empty() {
            return Err("backbone is empty".into());
        }
        let mut events = Vec::with_capacity(reply.events.len());
        for (i, e) in reply.events.into_iter().enumerate() {
            if e.description.trim().is_empty() {
                return Err(format!("event {i} has an empty description"));
            }
            events.push(BackboneEvent {
                id: ItemId::new(format!("e{i}")),
                description: e.description,
                ordinal: i,
                source_unit_ids: check_sources(&e.source_units, &known, "event")?,
            });
        }
        let mut attrs = Vec::with_capacity(reply.attributes.len());
        for (i, a) in reply.attributes.into_iter().enumerate() {
            if a.description.trim().is_empty() {
                return Err(format!("attribute {i} has an empty description"));
            }
            let sources = check_sources(&a.source_units, &known, "attribute")?;
            if sources.is_empty() {
                return Err(format!("attribute {i} cites no narrative unit"));
            }
            attrs.push(Attribute {
                id: ItemId::new(format!("a{i}")),
                description: a.description,
                kind: a.kind,
                source_unit_ids: sources,
            });
        }
        Ok((events, attrs))
    };
    let resp = ctx.call(PromptKind::ExtractStructure, text, 0, None, parse)?;
    let call = resp.call_record(PromptKind::ExtractStructure, None);
    let (events, attrs) = resp.parsed;
    Ok((events, attrs, call))
}

/// Zero-assignment repair: the event sharing the most source units with the
/// attribute, earliest ordinal on ties.
pub fn repair_target(attribute: &Attribute, backbone: &[BackboneEvent]) -> ItemId {
    let mut best = &backbone[0];
    let mut best_overlap = 0;
    for event in backbone {
        let overlap = event
            .source_unit_ids
            .intersection(&attribute.source_unit_ids)
            .count();
        if overlap > best_overlap {
            best = event;
            best_overlap = overlap;
        }
    }
    best.id.clone()
}

/// Builds the alignment map `Φ: A → 2^S`. Skips the model call when the
/// mapping is forced (no attributes, or a single event).
pub fn align(
    ctx: &Context<'_>,
    backbone: &[BackboneEvent],
    attributes: &[Attribute],
) -> Result<(AlignmentMap, Option<ModelCall>), FusionError> {
    if backbone.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    if attributes.is_empty() || backbone.len() == 1 {
        let only = BTreeSet::from([backbone[0].id.clone()]);
        let entries = attributes
            .iter()
            .map(|a| (a.id.clone(), only.clone()))
            .collect();
        return Ok((AlignmentMap { entries }, None));
    }

    let event_ids: BTreeSet<&str> = backbone.iter().map(|e| e.id.as_str()).collect();
    let attr_ids: BTreeSet<&str> = attributes.iter().map(|a| a.id.as_str()).collect();
    let mut events_text = String::new();
    for e in backbone {
        let _ = writeln!(events_text, "[{}] {}", e.id, e.description.trim());
    }
    let mut attrs_text = String::new();
    for a in attributes {
        let _ = writeln!(attrs_text, "[{}] {}", a.id, a.description.trim());
    }
    let text = ctx.render(
        prompt::ALIGN,
        &[("events", &events_text), ("attributes", &attrs_text)],
    )?;
    let parse = |raw: &str| -> Result<BTreeMap<ItemId, BTreeSet<ItemId>>, String> {
        let reply: AlignReply = json::from_reply(raw)?;
        let mut map: BTreeMap<ItemId, BTreeSet<ItemId>> = BTreeMap::new();
        for a in reply.assignments {
            if !attr_ids.contains(a.attribute.as_str()) {
                return Err(format!("unknown attribute id {}", a.attribute));
            }
            let slot = map.entry(ItemId::new(a.attribute.as_str())).or_default();
            for e in a.events {
                if !event_ids.contains(e.as_str()) {
                    return Err(format!("unknown event id {e}"));
                }
                slot.insert(ItemId::new(e));
            }
        }
        Ok(map)
    };
    let resp = ctx.call(PromptKind::Align, text, 0, None, parse)?;
    let call = resp.call_record(PromptKind::Align, None);
    let mut entries = resp.parsed;
    for attr in attributes {
        let slot = entries.entry(attr.id.clone()).or_default();
        if slot.is_empty() {
            let target = repair_target(attr, backbone);
            log::warn!(
                "attribute {} aligned to no event; repaired to {target}",
                attr.id
            );
            slot.insert(target);
        }
    }
    let map = AlignmentMap { entries };
    map.validate(backbone, attributes)?;
    Ok((map, Some(call)))
}

fn render_aligned(unit: &AlignedUnit) -> String {
    let mut out = format!("[{}] {}\n", unit.event.id, unit.event.description.trim());
    for a in &unit.attributes {
        let _ = writeln!(out, "    - [{}] {}", a.id, a.description.trim());
    }
    out
}

/// `b_i = ψ(d_i, D_aligned \ d_i)`: one `Verify` call per unit.
pub fn verify_unit(
    ctx: &Context<'_>,
    units: &[AlignedUnit],
    index: usize,
) -> Result<(ConsistencyComment, ModelCall), FusionError> {
    let unit = &units[index];
    let known: BTreeSet<&str> = units.iter().map(|u| u.event.id.as_str()).collect();
    let context: String = units
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != index)
        .map(|(_, u)| render_aligned(u))
        .collect();
    let context = if context.is_empty() {
        String::from("(none)\n")
    } else {
        context
    };
    let text = ctx.render(
        prompt::VERIFY,
        &[("unit", &render_aligned(unit)), ("context", &context)],
    )?;
    let unit_id = unit.event.id.clone();
    let parse = |raw: &str| -> Result<ConsistencyComment, String> {
        let reply: VerifyReply = json::from_reply(raw)?;
        if reply.verdict != Verdict::Consistent && reply.note.trim().is_empty() {
            return Err(format!("{:?} verdict without a note", reply.verdict));
        }
        let mut refs = BTreeSet::new();
        for r in reply.references {
            if !known.contains(r.as_str()) {
                return Err(format!("reference to unknown event {r}"));
            }
            refs.insert(ItemId::new(r));
        }
        Ok(ConsistencyComment {
            unit_id: unit_id.clone(),
            verdict: reply.verdict,
            note: reply.note,
            referenced_unit_ids: refs,
        })
    };
    let item = unit.event.id.as_str();
    let resp = ctx.call(PromptKind::Verify, text, 0, Some(item), parse)?;
    let call = resp.call_record(PromptKind::Verify, Some(item.into()));
    Ok((resp.parsed, call))
}

/// Baseline for the no-fusion ablation: each narrative unit becomes an
/// attribute-free event with a `Consistent` comment.
pub fn pass_through(narrative: &[NarrativeUnit]) -> Result<FusionOutput, FusionError> {
    if narrative.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let backbone: Vec<BackboneEvent> = narrative
        .iter()
        .enumerate()
        .map(|(i, u)| BackboneEvent {
            id: ItemId::new(format!("e{i}")),
            description: u.text.clone(),
            ordinal: i,
            source_unit_ids: BTreeSet::from([u.id.clone()]),
        })
        .collect();
    let pairs = backbone
        .iter()
        .map(|event| BaselinePair {
            unit: AlignedUnit {
                event: event.clone(),
                attributes: Vec::new(),
            },
            comment: ConsistencyComment {
                unit_id: event.id.clone(),
                verdict: Verdict::Consistent,
                note: String::new(),
                referenced_unit_ids: BTreeSet::new(),
            },
        })
        .collect();
    let baseline = BaselineState { pairs };
    baseline.validate()?;
    Ok(FusionOutput {
        backbone,
        attributes: Vec::new(),
        alignment: AlignmentMap::default(),
        baseline,
        conflicts: 0,
        doubts: 0,
        calls: Vec::new(),
    })
}

/// Phase one. `NoIF` short-circuits to [`pass_through`].
pub fn fuse(
    ctx: &Context<'_>,
    narrative: &[NarrativeUnit],
    variant: Variant,
) -> Result<FusionOutput, FusionError> {
    if narrative.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    if variant == Variant::NoIF {
        return pass_through(narrative);
    }
    let (backbone, attributes, extract_call) = decompose(ctx, narrative)?;
    let mut calls = alloc::vec![extract_call];
    let (alignment, align_call) = align(ctx, &backbone, &attributes)?;
    calls.extend(align_call);
    let units = alignment.aligned_units(&backbone, &attributes);
    let mut pairs = Vec::with_capacity(units.len());
    for i in 0..units.len() {
        let (comment, call) = verify_unit(ctx, &units, i)?;
        calls.push(call);
        pairs.push(BaselinePair {
            unit: units[i].clone(),
            comment,
        });
    }
    let baseline = BaselineState { pairs };
    baseline.validate()?;
    let conflicts = baseline.count(Verdict::Conflict);
    let doubts = baseline.count(Verdict::Doubt);
    Ok(FusionOutput {
        backbone,
        attributes,
        alignment,
        baseline,
        conflicts,
        doubts,
        calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Runtime;
    use crate::model::BackendError;
    use crate::prompt::PromptTemplates;
    use crate::state::RunConfig;
    use crate::testing::{narrative, ScriptModel};
    use alloc::string::ToString;
    use alloc::vec;
    use serde_json::json;

    fn with_ctx<R>(m: &ScriptModel, f: impl FnOnce(&Context<'_>) -> R) -> R {
        let t = PromptTemplates::default();
        let rt = Runtime {
            model: m,
            cache: None,
            templates: &t,
        };
        let ctx = rt.context("fixture", &RunConfig::default());
        f(&ctx)
    }

    /// Five units: dinner, the host going upstairs, the victim seen alive
    /// at 9pm, the doctor's time of death at 8pm, and the victim collapsing.
    fn manor(m: &mut ScriptModel) {
        m.set(PromptKind::ExtractStructure, 0, None, json!({
            "events": [
                {"description": "dinner served", "source_units": ["u0"]},
                {"description": "host goes upstairs", "source_units": ["u1"]},
                {"description": "victim seen alive at 9pm", "source_units": ["u2"]},
                {"description": "victim collapses", "source_units": ["u3", "u4"]}
            ],
            "attributes": [
                {"description": "poison stored upstairs", "kind": "evidentiary_descriptor", "source_units": ["u1"]},
                {"description": "door unlocked all evening", "kind": "object_state", "source_units": ["u0"]},
                {"description": "doctor puts death at 8pm", "kind": "evidentiary_descriptor", "source_units": ["u3"]},
                {"description": "wine glass half empty", "kind": "object_state", "source_units": ["u4"]},
                {"description": "host carries a tray", "kind": "action", "source_units": ["u1"]},
                {"description": "study on the ground floor", "kind": "location", "source_units": ["u4"]}
            ]
        }));
        m.set(
            PromptKind::Align,
            0,
            None,
            json!({"assignments": [
                {"attribute": "a0", "events": ["e1"]},
                {"attribute": "a1", "events": ["e0", "e1", "e2"]},
                {"attribute": "a2", "events": ["e3"]},
                {"attribute": "a3", "events": ["e3"]},
                {"attribute": "a4", "events": ["e1"]},
                {"attribute": "a5", "events": []}
            ]}),
        );
        m.set(
            PromptKind::Verify,
            0,
            Some("e0"),
            json!({"verdict": "consistent"}),
        );
        m.set(
            PromptKind::Verify,
            0,
            Some("e1"),
            json!({"verdict": "consistent"}),
        );
        m.set(PromptKind::Verify, 0, Some("e2"), json!({
            "verdict": "conflict", "note": "alive at 9pm contradicts death at 8pm", "references": ["e3"]
        }));
        m.set(
            PromptKind::Verify,
            0,
            Some("e3"),
            json!({
                "verdict": "doubt", "note": "missing causal link to the poison"
            }),
        );
    }

    #[test]
    fn scripted_fixture_fuses() {
        let mut m = ScriptModel::new();
        manor(&mut m);
        let out = with_ctx(&m, |ctx| fuse(ctx, &narrative(5), Variant::Full)).unwrap();
        assert_eq!((out.backbone.len(), out.attributes.len()), (4, 6));
        assert_eq!(out.baseline.pairs.len(), 4);
        assert_eq!((out.conflicts, out.doubts), (1, 1));
        // one extract, one align, four verify
        assert_eq!(out.calls.len(), 6);
        assert_eq!(
            out.alignment.entries[&ItemId::new("a0")],
            BTreeSet::from([ItemId::new("e1")])
        );
        assert_eq!(out.alignment.entries[&ItemId::new("a1")].len(), 3);
        // a5 had no assignment; repaired to the event sharing u4
        assert_eq!(
            out.alignment.entries[&ItemId::new("a5")],
            BTreeSet::from([ItemId::new("e3")])
        );
        // every attribute survives into the baseline
        assert_eq!(out.baseline.attribute_ids().len(), 6);
        let verify_items: Vec<_> = m
            .requests()
            .into_iter()
            .filter(|r| r.kind == PromptKind::Verify)
            .map(|r| r.item.unwrap())
            .collect();
        assert_eq!(verify_items, ["e0", "e1", "e2", "e3"]);
    }

    #[test]
    fn deterministic_across_runs() {
        let mut m = ScriptModel::new();
        manor(&mut m);
        let a = with_ctx(&m, |ctx| fuse(ctx, &narrative(5), Variant::Full)).unwrap();
        let b = with_ctx(&m, |ctx| fuse(ctx, &narrative(5), Variant::Full)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minimal_narrative() {
        let mut m = ScriptModel::new();
        m.set(
            PromptKind::ExtractStructure,
            0,
            None,
            json!({
                "events": [{"description": "A did X", "source_units": ["u0"]}]
            }),
        );
        m.set(
            PromptKind::Verify,
            0,
            None,
            json!({"verdict": "consistent"}),
        );
        let out = with_ctx(&m, |ctx| fuse(ctx, &narrative(1), Variant::Full)).unwrap();
        assert_eq!((out.backbone.len(), out.attributes.len()), (1, 0));
        assert_eq!((out.conflicts, out.doubts), (0, 0));
        assert!(out.calls.iter().all(|c| c.kind != PromptKind::Align));
    }

    #[test]
    fn malformed_extract_exhausts_retries() {
        let mut m = ScriptModel::new();
        m.set_raw(
            PromptKind::ExtractStructure,
            0,
            None,
            vec![
                "not json".into(),
                "{\"events\": []}".into(),
                "{\"oops\": 1}".into(),
            ],
        );
        let err = with_ctx(&m, |ctx| fuse(ctx, &narrative(2), Variant::Full)).unwrap_err();
        match err {
            FusionError::Call(CallError::Parse {
                kind, raw_attempts, ..
            }) => {
                assert_eq!(kind, PromptKind::ExtractStructure);
                assert_eq!(raw_attempts.len(), 3);
                assert_eq!(raw_attempts[0], "not json");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_ids_rejected() {
        let mut m = ScriptModel::new();
        manor(&mut m);
        m.set(
            PromptKind::Align,
            0,
            None,
            json!({"assignments": [{"attribute": "a0", "events": ["e9"]}]}),
        );
        let err = with_ctx(&m, |ctx| fuse(ctx, &narrative(5), Variant::Full)).unwrap_err();
        assert!(matches!(
            err,
            FusionError::Call(CallError::Parse {
                kind: PromptKind::Align,
                ..
            })
        ));

        let mut m = ScriptModel::new();
        m.set(
            PromptKind::ExtractStructure,
            0,
            None,
            json!({
                "events": [{"description": "x", "source_units": ["u7"]}]
            }),
        );
        let err = with_ctx(&m, |ctx| fuse(ctx, &narrative(2), Variant::Full)).unwrap_err();
        assert!(matches!(err, FusionError::Call(CallError::Parse { .. })));
    }

    #[test]
    fn non_consistent_verdict_needs_note() {
        let mut m = ScriptModel::new();
        manor(&mut m);
        m.set(
            PromptKind::Verify,
            0,
            Some("e3"),
            json!({"verdict": "doubt"}),
        );
        let err = with_ctx(&m, |ctx| fuse(ctx, &narrative(5), Variant::Full)).unwrap_err();
        assert!(matches!(
            err,
            FusionError::Call(CallError::Parse {
                kind: PromptKind::Verify,
                ..
            })
        ));
    }

    #[test]
    fn single_event_forces_alignment() {
        let backbone = vec![BackboneEvent {
            id: ItemId::new("e0"),
            description: "x".into(),
            ordinal: 0,
            source_unit_ids: BTreeSet::new(),
        }];
        let attrs: Vec<Attribute> = (0..3)
            .map(|i| Attribute {
                id: ItemId::new(format!("a{i}")),
                description: "y".into(),
                kind: AttributeKind::Other,
                source_unit_ids: BTreeSet::from([ItemId::new("u0")]),
            })
            .collect();
        let m = ScriptModel::new();
        let (map, call) = with_ctx(&m, |ctx| align(ctx, &backbone, &attrs)).unwrap();
        assert!(call.is_none());
        assert!(map
            .entries
            .values()
            .all(|s| s.len() == 1 && s.contains("e0")));
    }

    #[test]
    fn no_if_passes_units_through() {
        let m = ScriptModel::new();
        let out = with_ctx(&m, |ctx| fuse(ctx, &narrative(5), Variant::NoIF)).unwrap();
        assert_eq!(out.baseline.pairs.len(), 5);
        assert!(out
            .baseline
            .pairs
            .iter()
            .all(|p| p.comment.verdict == Verdict::Consistent));
        assert!(out.calls.is_empty());
        assert_eq!(
            out.baseline.pairs[2].unit.event.description,
            narrative(5)[2].text
        );
    }

    #[test]
    fn empty_and_missing() {
        let m = ScriptModel::new();
        assert_eq!(
            with_ctx(&m, |ctx| fuse(ctx, &[], Variant::Full)),
            Err(FusionError::EmptyInput)
        );
        let err = with_ctx(&m, |ctx| fuse(ctx, &narrative(1), Variant::Full)).unwrap_err();
        assert!(matches!(
            err,
            FusionError::Call(CallError::Backend(BackendError::MissingFixture(_)))
        ));
        assert!(err.to_string().contains("extract_structure"));
    }
}
