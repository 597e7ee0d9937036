//! Scoring and analytics over trajectory files: answer extraction, accuracy
//! with per-conflict strata, decomposition statistics, the
//! over-rationalization judge and cost accounting.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{bucket_of, LengthBucket};
use crate::domain::{ActionKind, Choice, ConflictType, DatasetRecord, KnowledgeSource, Trajectory, UsageRecord};
use crate::engine::render_history;
use crate::parallel::{self, Execution};
use crate::prompts::{render, PromptSet};
use crate::provider::{CompletionParams, LanguageModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory references unknown record `{0}`")]
    JoinError(String),
    #[error("no price entry for model `{0}`")]
    PriceMissing(String),
    #[error("price table: {0}")]
    PriceTable(String),
}

static RULE_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:\banswer)\s*:\s*\(?([A-Z])\)?(?:[^A-Za-z0-9]|$)").unwrap());
static RULE_ANSWER_IS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)(?i:\bthe answer is)\s*(?:\(([A-Z])\)|([A-Z])(?:[.,;:!]|\s*$))").unwrap()
});
static RULE_TRAILING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([A-Z])[.)]?$").unwrap());

/// Maps free text to an option label, trying in priority order
/// `Answer: X`, `The answer is (X)`, then a lone trailing letter line.
/// Labels outside `n_options` are ignored; two distinct in-range labels at the
/// same rule make the result ambiguous, which abstains.
pub fn extract_choice(text: &str, n_options: usize) -> Choice {
    let in_range = |c: char| (c as usize - 'A' as usize) < n_options;
    let decide = |labels: Vec<char>| -> Option<Choice> {
        let mut distinct: Vec<char> = labels.into_iter().filter(|c| in_range(*c)).collect();
        distinct.sort_unstable();
        distinct.dedup();
        match distinct.as_slice() {
            [] => None,
            [one] => Some(Choice::Option(*one as u8 - b'A')),
            _ => Some(Choice::Abstain),
        }
    };
    let first_char = |m: Option<regex::Match<'_>>| m.and_then(|m| m.as_str().chars().next());

    let rule1: Vec<char> = RULE_ANSWER.captures_iter(text).filter_map(|c| first_char(c.get(1))).collect();
    if let Some(c) = decide(rule1) {
        return c;
    }
    let rule2: Vec<char> = RULE_ANSWER_IS
        .captures_iter(text)
        .filter_map(|c| first_char(c.get(1).or(c.get(2))))
        .collect();
    if let Some(c) = decide(rule2) {
        return c;
    }
    let rule3: Vec<char> = text
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .and_then(|l| RULE_TRAILING.captures(l))
        .and_then(|c| first_char(c.get(1)))
        .into_iter()
        .collect();
    decide(rule3).unwrap_or(Choice::Abstain)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Stratum {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += correct as usize;
    }

    fn finish(mut self) -> Self {
        self.accuracy = if self.n == 0 { 0.0 } else { self.correct as f64 / self.n as f64 };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_conflict: BTreeMap<ConflictType, Stratum>,
}

type RecordIndex<'a> = HashMap<&'a str, &'a DatasetRecord>;

fn index(records: &[DatasetRecord]) -> RecordIndex<'_> {
    records.iter().map(|r| (r.id.as_str(), r)).collect()
}

fn join<'a>(trajectories: &'a [Trajectory], idx: &RecordIndex<'a>) -> Result<Vec<(&'a Trajectory, &'a DatasetRecord)>, EvalError> {
    trajectories
        .iter()
        .map(|t| {
            idx.get(t.record_id.as_str())
                .map(|r| (t, *r))
                .ok_or_else(|| EvalError::JoinError(t.record_id.clone()))
        })
        .collect()
}

pub fn is_correct(t: &Trajectory, r: &DatasetRecord) -> bool {
    t.final_answer.and_then(Choice::index) == Some(r.gold_index)
}

/// Accuracy with abstains counted incorrect, overall and per conflict type.
pub fn accuracy(trajectories: &[Trajectory], records: &[DatasetRecord]) -> Result<AccuracyReport, EvalError> {
    let idx = index(records);
    let pairs = join(trajectories, &idx)?;
    let mut overall = Stratum::default();
    let mut per: BTreeMap<ConflictType, Stratum> = BTreeMap::new();
    for (t, r) in pairs {
        let ok = is_correct(t, r);
        overall.add(ok);
        per.entry(r.conflict_type).or_default().add(ok);
    }
    let overall = overall.finish();
    Ok(AccuracyReport {
        n: overall.n,
        correct: overall.correct,
        accuracy: overall.accuracy,
        per_conflict: per.into_iter().map(|(k, v)| (k, v.finish())).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompStats {
    /// Fraction of trajectories with at least one DECOMPOSE, by evidence length.
    pub rate_by_bucket: BTreeMap<LengthBucket, f64>,
    /// Mean number of DECOMPOSE steps per trajectory, by conflict type.
    pub avg_steps_by_conflict: BTreeMap<ConflictType, f64>,
    pub avg_turns: f64,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Share of trajectories containing a DECOMPOSE, grouped by an arbitrary key.
pub fn decomposition_rate_by<K: Ord>(
    pairs: &[(&Trajectory, &DatasetRecord)],
    key: impl Fn(&DatasetRecord) -> K,
) -> BTreeMap<K, f64> {
    let mut counts: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for (t, r) in pairs {
        let e = counts.entry(key(r)).or_default();
        e.0 += 1;
        e.1 += (t.count_kind(ActionKind::Decompose) > 0) as usize;
    }
    counts.into_iter().map(|(k, (n, hit))| (k, mean(hit as f64, n))).collect()
}

pub fn decomposition_stats(trajectories: &[Trajectory], records: &[DatasetRecord]) -> Result<DecompStats, EvalError> {
    let idx = index(records);
    let pairs = join(trajectories, &idx)?;
    let rate_by_bucket = decomposition_rate_by(&pairs, bucket_of);
    let mut steps: BTreeMap<ConflictType, (usize, usize)> = BTreeMap::new();
    for (t, r) in &pairs {
        let e = steps.entry(r.conflict_type).or_default();
        e.0 += 1;
        e.1 += t.count_kind(ActionKind::Decompose);
    }
    let total_turns: usize = pairs.iter().map(|(t, _)| t.steps.len()).sum();
    Ok(DecompStats {
        rate_by_bucket,
        avg_steps_by_conflict: steps.into_iter().map(|(k, (n, s))| (k, mean(s as f64, n))).collect(),
        avg_turns: mean(total_turns as f64, pairs.len()),
    })
}

/// Decomposition rate by record domain tag (`untagged` when absent).
pub fn decomposition_rate_by_domain(
    trajectories: &[Trajectory],
    records: &[DatasetRecord],
) -> Result<BTreeMap<String, f64>, EvalError> {
    let idx = index(records);
    let pairs = join(trajectories, &idx)?;
    Ok(decomposition_rate_by(&pairs, |r| r.domain_tag.clone().unwrap_or_else(|| "untagged".into())))
}

/// Reads a YES/NO verdict from the last non-empty line.
pub fn parse_judge_verdict(reply: &str) -> Option<bool> {
    let last = reply.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let last = last.strip_prefix("Verdict:").unwrap_or(last);
    match last.trim().trim_end_matches(['.', '!']).to_ascii_uppercase().as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

/// Asks the judge whether the trace treats contradictory facts as equally
/// valid. Unparseable or failed judgements count as not flagged.
pub fn over_rationalization_flag(
    trajectory: &Trajectory,
    record: &DatasetRecord,
    judge: &dyn LanguageModel,
    prompts: &PromptSet,
    params: &CompletionParams,
) -> bool {
    let parametric: Vec<&str> = trajectory
        .units
        .values()
        .filter(|u| u.source == KnowledgeSource::Parametric && u.depth == 0)
        .map(|u| u.text.as_str())
        .collect();
    let parametric = if parametric.is_empty() { "(none elicited)".to_string() } else { parametric.join("\n") };
    let evidence = record.evidence_text();
    let prompt = render(
        &prompts.judge,
        &[
            ("question", &record.question),
            ("knowledge_a", &parametric),
            ("knowledge_b", &evidence),
            ("trace", &render_history(&trajectory.steps)),
        ],
    );
    match judge.complete(&prompt, params) {
        Ok(r) => parse_judge_verdict(&r.text).unwrap_or_else(|| {
            log::warn!("record {}: unparseable judge verdict {:?}", record.id, r.text);
            false
        }),
        Err(e) => {
            log::warn!("record {}: judge call failed: {e}", record.id);
            false
        }
    }
}

pub fn over_rationalization_ratio(flags: &[bool]) -> f64 {
    mean(flags.iter().filter(|f| **f).count() as f64, flags.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub input_per_token: f64,
    pub output_per_token: f64,
}

/// USD prices per token keyed by model name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::PriceTable(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EvalError::PriceTable(e.to_string()))
    }

    pub fn get(&self, model: &str) -> Result<Price, EvalError> {
        self.0.get(model).copied().ok_or_else(|| EvalError::PriceMissing(model.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub rows: usize,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub total_cost: f64,
    pub avg_wall_time_ms: f64,
    pub estimated_fraction: f64,
}

pub fn cost_summary(usage: &[UsageRecord], prices: &PriceTable, model: &str) -> Result<CostSummary, EvalError> {
    let price = prices.get(model)?;
    let total = usage.iter().fold(UsageRecord::default(), |acc, u| acc + *u);
    let estimated = usage.iter().filter(|u| u.is_estimated()).count();
    Ok(CostSummary {
        rows: usage.len(),
        total_input_tokens: total.input_tokens,
        total_output_tokens: total.output_tokens,
        total_cost: total.input_tokens as f64 * price.input_per_token + total.output_tokens as f64 * price.output_per_token,
        avg_wall_time_ms: mean(total.wall_time_ms as f64, usage.len()),
        estimated_fraction: mean(estimated as f64, usage.len()),
    })
}

/// Per-query averages in the layout of the cost comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: String,
    pub avg_turns: f64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
    pub avg_cost_usd: f64,
    pub avg_inference_time_s: f64,
}

pub const COST_HEADERS: [&str; 6] = [
    "Method",
    "Avg. # Turns",
    "Avg. Input Tokens",
    "Avg. Output Tokens",
    "Avg. Cost (USD)",
    "Avg. Inference Time (s)",
];

pub fn cost_row(method: &str, trajectories: &[Trajectory], summary: &CostSummary) -> CostRow {
    let n = trajectories.len();
    let turns: usize = trajectories.iter().map(|t| t.steps.len()).sum();
    CostRow {
        method: method.to_string(),
        avg_turns: mean(turns as f64, n),
        avg_input_tokens: mean(summary.total_input_tokens as f64, n),
        avg_output_tokens: mean(summary.total_output_tokens as f64, n),
        avg_cost_usd: mean(summary.total_cost, n),
        avg_inference_time_s: summary.avg_wall_time_ms * summary.rows as f64 / 1000.0 / n.max(1) as f64,
    }
}

pub fn render_cost_table(rows: &[CostRow]) -> String {
    let mut out = String::new();
    let widths = COST_HEADERS.map(|h| h.len().max(12));
    for (h, w) in COST_HEADERS.iter().zip(widths) {
        let _ = write!(out, "{h:<w$}  ");
    }
    out = out.trim_end().to_string();
    out.push('\n');
    for r in rows {
        let cells = [
            r.method.clone(),
            format!("{:.1}", r.avg_turns),
            format!("{:.0}", r.avg_input_tokens),
            format!("{:.0}", r.avg_output_tokens),
            format!("${:.4}", r.avg_cost_usd),
            format!("{:.1}", r.avg_inference_time_s),
        ];
        let line: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub model_name: String,
    pub n: usize,
    pub accuracy: f64,
    pub per_conflict: BTreeMap<ConflictType, Stratum>,
    pub decomposition: DecompStats,
    pub cost: Option<CostSummary>,
    pub cost_row: Option<CostRow>,
    pub failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub over_rationalization_ratio: Option<f64>,
}

/// Full report. Cost is included when a price table is given.
pub fn evaluate(
    trajectories: &[Trajectory],
    records: &[DatasetRecord],
    model_name: &str,
    prices: Option<&PriceTable>,
) -> Result<EvalReport, EvalError> {
    let acc = accuracy(trajectories, records)?;
    let decomposition = decomposition_stats(trajectories, records)?;
    let method = trajectories.first().map(|t| t.method.clone()).unwrap_or_default();
    let (cost, cost_row) = match prices {
        Some(p) => {
            let usage: Vec<UsageRecord> = trajectories.iter().map(Trajectory::total_usage).collect();
            let summary = cost_summary(&usage, p, model_name)?;
            let row = cost_row(&method, trajectories, &summary);
            (Some(summary), Some(row))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        method,
        model_name: model_name.to_string(),
        n: acc.n,
        accuracy: acc.accuracy,
        per_conflict: acc.per_conflict,
        decomposition,
        cost,
        cost_row,
        failed: trajectories.iter().filter(|t| t.failed()).count(),
        over_rationalization_ratio: None,
    })
}

/// Judges every trajectory and returns the flagged ratio.
pub fn judge_run(
    trajectories: &[Trajectory],
    records: &[DatasetRecord],
    judge: &dyn LanguageModel,
    prompts: &PromptSet,
    params: &CompletionParams,
    exec: Execution,
) -> Result<f64, EvalError> {
    let idx = index(records);
    let pairs = join(trajectories, &idx)?;
    let flags = parallel::map(&pairs, exec, |(t, r)| over_rationalization_flag(t, r, judge, prompts, params));
    Ok(over_rationalization_ratio(&flags))
}

/// Fixed-width accuracy table with one column per conflict stratum.
pub fn render_report_table(reports: &[EvalReport]) -> String {
    let strata: Vec<ConflictType> = {
        let mut s: Vec<ConflictType> = reports.iter().flat_map(|r| r.per_conflict.keys().copied()).collect();
        s.sort();
        s.dedup();
        s
    };
    let mut out = format!("{:<14}  {:<14}  {:>6}  {:>9}", "Method", "Model", "N", "Accuracy");
    for s in &strata {
        let _ = write!(out, "  {:>14}", s.as_str());
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<14}  {:<14}  {:>6}  {:>9.2}", r.method, r.model_name, r.n, r.accuracy * 100.0);
        for s in &strata {
            match r.per_conflict.get(s) {
                Some(st) => {
                    let _ = write!(out, "  {:>14.2}", st.accuracy * 100.0);
                }
                None => {
                    let _ = write!(out, "  {:>14}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Fixed-width table of a keyed decomposition-rate map.
pub fn render_rate_table<K: std::fmt::Display>(title: &str, rates: &BTreeMap<K, f64>) -> String {
    let mut out = format!("{title:<16}  {:>10}\n", "DECOMPOSE %");
    for (k, v) in rates {
        let _ = writeln!(out, "{:<16}  {:>10.1}", k.to_string(), v * 100.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionDirective, EvidenceFragment, TraceStep};
    use crate::provider::scripted_load;
    use proptest::prelude::*;

    #[test]
    fn extraction_rules() {
        assert_eq!(extract_choice("The answer is (B)", 4), Choice::Option(1));
        assert_eq!(extract_choice("Answer: B. Because the evidence is newer.", 4), Choice::Option(1));
        assert_eq!(extract_choice("It is A or B", 4), Choice::Abstain);
        assert_eq!(extract_choice("reasoning...\nC", 4), Choice::Option(2));
        assert_eq!(extract_choice("reasoning...\n(D).", 4), Choice::Abstain);
        assert_eq!(extract_choice("reasoning...\n(D)", 4), Choice::Option(3));
        assert_eq!(extract_choice("Answer: A\nAnswer: C", 4), Choice::Abstain);
        assert_eq!(extract_choice("Answer: A\nAnswer: A", 4), Choice::Option(0));
        assert_eq!(extract_choice("Answer: E", 4), Choice::Abstain);
        // rule 1 wins over rule 2
        assert_eq!(extract_choice("The answer is (A). Answer: C", 4), Choice::Option(2));
    }

    fn rec(id: &str, gold: usize, ct: ConflictType, evidence_tokens: usize) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            question: "q?".into(),
            options: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            gold_index: gold,
            evidence: if evidence_tokens == 0 {
                vec![]
            } else {
                vec![EvidenceFragment { fragment_id: "e".into(), text: vec!["w"; evidence_tokens].join(" ") }]
            },
            conflict_type: ct,
            domain_tag: None,
            source_dataset: "t".into(),
        }
    }

    fn traj(id: &str, answer: Choice, decomposes: usize) -> Trajectory {
        let mut t = Trajectory::new(id, "micro_act");
        for i in 0..decomposes {
            t.steps.push(TraceStep {
                turn: i as u32 + 1,
                thought: String::new(),
                action: ActionDirective::new(ActionKind::Decompose, vec!["p0".into(), "r1".into()]),
                observation: String::new(),
                usage: UsageRecord::default(),
                assessment: None,
            });
        }
        t.final_answer = Some(answer);
        t
    }

    #[test]
    fn accuracy_arithmetic() {
        let records: Vec<_> = (0..8).map(|i| rec(&format!("q{i}"), 0, ConflictType::Temporal, 10)).collect();
        let trajs: Vec<_> = (0..8)
            .map(|i| traj(&format!("q{i}"), if i < 2 { Choice::Option(0) } else { Choice::Option(1) }, 0))
            .collect();
        let r = accuracy(&trajs, &records).unwrap();
        assert_eq!(r.accuracy, 0.25);
        let all: Vec<_> = (0..8).map(|i| traj(&format!("q{i}"), Choice::Option(0), 0)).collect();
        assert_eq!(accuracy(&all, &records).unwrap().accuracy, 1.0);
    }

    #[test]
    fn strata_include_none() {
        let records = vec![rec("a", 0, ConflictType::Semantic, 5), rec("b", 1, ConflictType::None, 5)];
        let trajs = vec![traj("a", Choice::Option(0), 0), traj("b", Choice::Abstain, 0)];
        let r = accuracy(&trajs, &records).unwrap();
        assert_eq!(r.per_conflict[&ConflictType::Semantic].accuracy, 1.0);
        assert_eq!(r.per_conflict[&ConflictType::None].accuracy, 0.0);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn join_error() {
        let r = accuracy(&[traj("missing", Choice::Option(0), 0)], &[rec("a", 0, ConflictType::None, 1)]);
        assert!(matches!(r, Err(EvalError::JoinError(id)) if id == "missing"));
    }

    #[test]
    fn no_decomposition_anywhere() {
        let records = vec![rec("a", 0, ConflictType::Semantic, 50), rec("b", 0, ConflictType::Temporal, 450)];
        let trajs = vec![traj("a", Choice::Option(0), 0), traj("b", Choice::Option(0), 0)];
        let s = decomposition_stats(&trajs, &records).unwrap();
        assert!(s.rate_by_bucket.values().all(|v| *v == 0.0));
        assert!(s.avg_steps_by_conflict.values().all(|v| *v == 0.0));
    }

    #[test]
    fn avg_steps_per_conflict_type() {
        let records = vec![
            rec("a", 0, ConflictType::Misinformation, 5),
            rec("b", 0, ConflictType::Temporal, 5),
            rec("c", 0, ConflictType::Temporal, 5),
        ];
        let trajs = vec![traj("a", Choice::Option(0), 1), traj("b", Choice::Option(0), 1), traj("c", Choice::Option(0), 2)];
        let s = decomposition_stats(&trajs, &records).unwrap();
        assert_eq!(s.avg_steps_by_conflict[&ConflictType::Misinformation], 1.0);
        assert_eq!(s.avg_steps_by_conflict[&ConflictType::Temporal], 1.5);
        assert!((s.avg_turns - 4.0 / 3.0).abs() < 1e-12);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["avg_steps_by_conflict"]["temporal"].is_number());
    }

    #[test]
    fn judge_verdicts() {
        let r = rec("a", 0, ConflictType::Temporal, 5);
        let t = traj("a", Choice::Option(0), 1);
        let prompts = PromptSet::builtin();
        let params = CompletionParams::default();
        let yes = scripted_load(&["Both 2010 and recently are treated as valid.\nYES"], None);
        assert!(over_rationalization_flag(&t, &r, &yes, &prompts, &params));
        let no = scripted_load(&["NO"], None);
        assert!(!over_rationalization_flag(&t, &r, &no, &prompts, &params));
        let garbage = scripted_load(&["perhaps"], None);
        assert!(!over_rationalization_flag(&t, &r, &garbage, &prompts, &params));
        assert_eq!(over_rationalization_ratio(&[true, false, false, true]), 0.5);
    }

    #[test]
    fn cost_arithmetic() {
        let mut prices = PriceTable::default();
        prices.0.insert("m".into(), Price { input_per_token: 0.5, output_per_token: 2.0 });
        let u = UsageRecord { input_tokens: 100, output_tokens: 50, wall_time_ms: 10, provider_calls: 1, estimated_calls: 0 };
        let s = cost_summary(&[u, u], &prices, "m").unwrap();
        assert_eq!((s.total_input_tokens, s.total_output_tokens), (200, 100));
        assert_eq!(s.total_cost, 300.0);
        let z = cost_summary(&[], &prices, "m").unwrap();
        assert_eq!(z, CostSummary::default());
        assert!(matches!(cost_summary(&[u], &prices, "x"), Err(EvalError::PriceMissing(_))));
    }

    #[test]
    fn cost_table_headers() {
        let table = render_cost_table(&[]);
        for h in ["Avg. # Turns", "Avg. Input Tokens", "Avg. Output Tokens", "Avg. Cost (USD)", "Avg. Inference Time (s)"] {
            assert!(table.contains(h));
        }
    }

    proptest! {
        #[test]
        fn extraction_is_total(s in "\\PC{0,80}", n in 2usize..=26) {
            let c = extract_choice(&s, n);
            if let Choice::Option(i) = c {
                prop_assert!((i as usize) < n);
            }
        }

        #[test]
        fn accuracy_is_order_independent(answers in proptest::collection::vec(0u8..4, 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let records: Vec<_> = answers.iter().enumerate()
                .map(|(i, _)| rec(&format!("q{i}"), i % 4, ConflictType::ALL[i % 4], 3)).collect();
            let mut trajs: Vec<_> = answers.iter().enumerate()
                .map(|(i, a)| traj(&format!("q{i}"), Choice::Option(*a), 0)).collect();
            let before = accuracy(&trajs, &records).unwrap();
            trajs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let after = accuracy(&trajs, &records).unwrap();
            prop_assert_eq!(&before, &after);
            let weighted: usize = before.per_conflict.values().map(|s| s.correct).sum();
            prop_assert_eq!(weighted, before.correct);
            let weighted_acc: f64 = before.per_conflict.values().map(|s| s.n as f64 * s.accuracy).sum::<f64>() / before.n as f64;
            prop_assert!((weighted_acc - before.accuracy).abs() < 1e-9);
        }
    }
}
