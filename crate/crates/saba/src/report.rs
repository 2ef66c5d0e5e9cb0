//! Score files, aggregate summaries and the text tables printed by the CLI.
//!
//! Percentages are rounded to one decimal both in files and on screen.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use saba_core::cost::{cost_summary, CostBasis, CostMode};
use saba_core::eval::{
    mean_std, normalized_cost, CaseScore, EvalError, QaScore, ReliabilityReport,
};
use saba_core::state::{TraceRecord, Variant};
use serde::{Deserialize, Serialize};

use crate::trace_store::RunEnvelope;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Rounds to one decimal place.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn fmt_pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.1}", round1(v)),
        None => "n/a".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    Detective(CaseScore),
    Qa(QaScore),
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub run_id: String,
    pub case_id: String,
    pub split: String,
    pub variant: Variant,
    pub run_index: u32,
    /// Cost of the run in the configured basis.
    pub cost: u64,
    pub metrics: Metrics,
}

impl ScoreLine {
    /// Named rates in percent.
    fn rates(&self) -> Vec<(&'static str, f64)> {
        match &self.metrics {
            Metrics::Detective(s) => vec![
                ("SA", if s.suspect_correct { 100.0 } else { 0.0 }),
                ("R-M", 100.0 * s.motive_recall),
                ("R-O", 100.0 * s.modus_recall),
                ("CCR", 100.0 * s.clue_coverage),
            ],
            Metrics::Qa(s) => vec![
                ("EM", if s.exact_match { 100.0 } else { 0.0 }),
                ("SF", 100.0 * s.support_f1),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        mean_std(values).map(|(mean, std)| Self {
            mean: round1(mean),
            std: round1(std),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub runs: usize,
    pub cases: usize,
    /// Per-run mean over cases, then mean ± sample std over runs.
    pub metrics: BTreeMap<String, MeanStd>,
    /// Normalized cost relative to the baseline variant, when it was run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub cost_basis: CostBasis,
    pub baseline: String,
    pub failed_runs: usize,
    pub variants: BTreeMap<String, VariantSummary>,
}

pub fn run_cost(env: &RunEnvelope, basis: CostBasis) -> u64 {
    records_cost(&env.records, basis)
}

pub fn records_cost(records: &[TraceRecord], basis: CostBasis) -> u64 {
    cost_summary(records, CostMode::default()).amount(basis)
}

pub fn summarize(
    lines: &[ScoreLine],
    failed_runs: usize,
    baseline: Variant,
    basis: CostBasis,
) -> Result<Summary, EvalError> {
    let mut by_variant: BTreeMap<&'static str, Vec<&ScoreLine>> = BTreeMap::new();
    for l in lines {
        by_variant.entry(l.variant.label()).or_default().push(l);
    }
    // variant → per-run cost totals, in run order
    let mut costs: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut variants = BTreeMap::new();
    for (label, ls) in &by_variant {
        let mut per_run: BTreeMap<u32, Vec<&ScoreLine>> = BTreeMap::new();
        for l in ls {
            per_run.entry(l.run_index).or_default().push(l);
        }
        let mut series: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        for run in per_run.values() {
            let mut sums: BTreeMap<&'static str, f64> = BTreeMap::new();
            for l in run {
                for (name, v) in l.rates() {
                    *sums.entry(name).or_default() += v;
                }
            }
            for (name, total) in sums {
                series
                    .entry(name)
                    .or_default()
                    .push(total / run.len() as f64);
            }
            series
                .entry("cost/case")
                .or_default()
                .push(run.iter().map(|l| l.cost as f64).sum::<f64>() / run.len() as f64);
            costs
                .entry(label.to_string())
                .or_default()
                .push(run.iter().map(|l| l.cost).sum());
        }
        let cases = ls
            .iter()
            .map(|l| &l.case_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        variants.insert(
            label.to_string(),
            VariantSummary {
                runs: per_run.len(),
                cases,
                metrics: series
                    .into_iter()
                    .filter_map(|(k, v)| MeanStd::of(&v).map(|m| (k.to_string(), m)))
                    .collect(),
                normalized_cost: None,
            },
        );
    }
    if costs.contains_key(baseline.label()) {
        let t = normalized_cost(&costs, baseline.label())?;
        for (label, value) in t {
            if let Some(v) = variants.get_mut(&label) {
                v.normalized_cost = Some(value);
            }
        }
    }
    Ok(Summary {
        schema_version: REPORT_SCHEMA_VERSION,
        cost_basis: basis,
        baseline: baseline.label().into(),
        failed_runs,
        variants,
    })
}

pub fn render_summary(summary: &Summary) -> String {
    let mut names: Vec<&String> = summary
        .variants
        .values()
        .flat_map(|v| v.metrics.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    // rates first in their conventional order, cost last
    let order = ["SA", "R-M", "R-O", "CCR", "EM", "SF", "cost/case"];
    names.sort_by_key(|n| order.iter().position(|o| o == n).unwrap_or(order.len()));
    let mut out = String::new();
    let _ = write!(out, "{:<22} {:>4} {:>5}", "variant", "runs", "cases");
    for n in &names {
        let _ = write!(out, " {:>14}", n);
    }
    let _ = writeln!(out, " {:>7}", "T");
    for (label, v) in &summary.variants {
        let _ = write!(out, "{:<22} {:>4} {:>5}", label, v.runs, v.cases);
        for n in &names {
            let cell = v
                .metrics
                .get(*n)
                .map(|m| format!("{:.1} ± {:.1}", m.mean, m.std))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {:>14}", cell);
        }
        let t = v
            .normalized_cost
            .map(|t| format!("{t:.2}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(out, " {:>7}", t);
    }
    if summary.failed_runs > 0 {
        let _ = writeln!(
            out,
            "{} run(s) failed and are not scored",
            summary.failed_runs
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub splits: BTreeMap<String, ReliabilityReport>,
    pub overall: ReliabilityReport,
}

pub fn render_audit(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<34} {:>10} {:>12} {:>8} {:>28}",
        "split", "hypotheses", "Unsupported", "Flagged", "Correction (within flagged)"
    );
    let rows = report
        .splits
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .chain(std::iter::once(("all", &report.overall)));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<34} {:>10} {:>12} {:>8} {:>28}",
            name,
            r.hypotheses,
            fmt_pct(r.unsupported_rate),
            fmt_pct(r.flagged_rate),
            fmt_pct(r.correction_within_flagged_rate)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(variant: Variant, run: u32, case: &str, sa: bool, cost: u64) -> ScoreLine {
        ScoreLine {
            run_id: format!("{case}-{run}"),
            case_id: case.into(),
            split: "s".into(),
            variant,
            run_index: run,
            cost,
            metrics: Metrics::Detective(CaseScore {
                case_id: case.into(),
                suspect_correct: sa,
                motive_recall: 1.0,
                modus_recall: 0.5,
                clue_coverage: 0.25,
                cost_tokens: cost,
            }),
        }
    }

    #[test]
    fn mean_over_runs_and_cost_ratio() {
        let mut lines = vec![];
        for run in 1..=3 {
            lines.push(line(Variant::Direct, run, "a", false, 500));
            lines.push(line(Variant::Direct, run, "b", true, 500));
            lines.push(line(Variant::Full, run, "a", true, 4600));
            lines.push(line(Variant::Full, run, "b", true, 4600));
        }
        let s = summarize(&lines, 0, Variant::Direct, CostBasis::Tokens).unwrap();
        let full = &s.variants["full"];
        assert_eq!(full.runs, 3);
        assert_eq!(
            full.metrics["SA"],
            MeanStd {
                mean: 100.0,
                std: 0.0
            }
        );
        assert_eq!(s.variants["direct"].metrics["SA"].mean, 50.0);
        assert_eq!(full.metrics["R-O"].mean, 50.0);
        assert!((full.normalized_cost.unwrap() - 9.2).abs() < 1e-9);
        assert_eq!(s.variants["direct"].normalized_cost, Some(1.0));
        let table = render_summary(&s);
        assert!(table.contains("100.0 ± 0.0"), "{table}");
    }

    #[test]
    fn no_baseline_no_ratio() {
        let lines = vec![line(Variant::Full, 1, "a", true, 10)];
        let s = summarize(&lines, 1, Variant::Direct, CostBasis::Tokens).unwrap();
        assert_eq!(s.variants["full"].normalized_cost, None);
        assert!(render_summary(&s).contains("1 run(s) failed"));
    }

    #[test]
    fn one_decimal_rounding() {
        assert_eq!(fmt_pct(Some(59.259259)), "59.3");
        assert_eq!(fmt_pct(None), "n/a");
        assert_eq!(round1(22.04), 22.0);
    }
}
