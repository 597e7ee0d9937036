//! Shared data model: dataset records, knowledge units with lineage,
//! trajectories and usage accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::ComplexityScore;

/// Maximum number of answer options (single-letter labels `A`..`Z`).
pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("knowledge unit text must be non-empty")]
    DegenerateUnit,
    #[error("option index {0} is outside A..Z")]
    LabelRange(i64),
    #[error("unknown knowledge unit `{0}`")]
    UnknownUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictType {
    Misinformation,
    Temporal,
    Semantic,
    None,
}

impl ConflictType {
    pub const ALL: [ConflictType; 4] = [
        ConflictType::Misinformation,
        ConflictType::Temporal,
        ConflictType::Semantic,
        ConflictType::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConflictType::Misinformation => "misinformation",
            ConflictType::Temporal => "temporal",
            ConflictType::Semantic => "semantic",
            ConflictType::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ConflictType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceFragment {
    pub fragment_id: String,
    pub text: String,
}

/// Wire form of a dataset line. Every field is kept loosely typed so that
/// [`validate_record`] can report violations instead of failing to parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: i64,
    #[serde(default)]
    pub evidence: Vec<EvidenceFragment>,
    pub conflict_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
    #[serde(default)]
    pub source_dataset: String,
}

/// A validated multiple-choice QA item with its pre-retrieved evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
    pub evidence: Vec<EvidenceFragment>,
    pub conflict_type: ConflictType,
    pub domain_tag: Option<String>,
    pub source_dataset: String,
}

impl DatasetRecord {
    pub fn gold_label(&self) -> Choice {
        Choice::Option(self.gold_index as u8)
    }

    /// All evidence fragments joined by a single space.
    pub fn evidence_text(&self) -> String {
        self.evidence
            .iter()
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl From<DatasetRecord> for RawRecord {
    fn from(r: DatasetRecord) -> Self {
        RawRecord {
            id: r.id,
            question: r.question,
            options: r.options,
            gold_index: r.gold_index as i64,
            evidence: r.evidence,
            conflict_type: r.conflict_type.as_str().to_string(),
            domain_tag: r.domain_tag,
            source_dataset: r.source_dataset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

impl TryFrom<RawRecord> for DatasetRecord {
    type Error = Violations;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let violations = validate_record(&raw);
        if !violations.is_empty() {
            return Err(Violations(violations));
        }
        Ok(DatasetRecord {
            conflict_type: ConflictType::parse(&raw.conflict_type).expect("validated"),
            gold_index: raw.gold_index as usize,
            id: raw.id,
            question: raw.question,
            options: raw.options,
            evidence: raw.evidence,
            domain_tag: raw.domain_tag,
            source_dataset: raw.source_dataset,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: &str, rule: impl Into<String>) -> Self {
        Violation { field: field.to_string(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every record invariant. An empty result means the record is valid.
pub fn validate_record(record: &RawRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.id.trim().is_empty() {
        out.push(Violation::new("id", "id must be non-empty"));
    }
    if record.question.trim().is_empty() {
        out.push(Violation::new("question", "question must be non-empty"));
    }
    let n = record.options.len();
    if n < 2 {
        out.push(Violation::new("options", "at least 2 options required"));
    }
    if n > MAX_OPTIONS {
        out.push(Violation::new("options", "at most 26 options allowed"));
    }
    let distinct: BTreeSet<&str> = record.options.iter().map(String::as_str).collect();
    if distinct.len() != n {
        out.push(Violation::new("options", "options must be pairwise distinct"));
    }
    if record.gold_index < 0 || record.gold_index as usize >= n {
        out.push(Violation::new("gold_index", "gold_index out of range"));
    }
    for (i, e) in record.evidence.iter().enumerate() {
        if e.text.trim().is_empty() {
            out.push(Violation::new("evidence", format!("fragment {i} has empty text")));
        }
    }
    if ConflictType::parse(&record.conflict_type).is_none() {
        out.push(Violation::new("conflict_type", "unknown conflict_type"));
    }
    out
}

/// Single uppercase letter for a zero-based option index.
pub fn option_label(index: i64) -> Result<String, DomainError> {
    if !(0..MAX_OPTIONS as i64).contains(&index) {
        return Err(DomainError::LabelRange(index));
    }
    Ok(((b'A' + index as u8) as char).to_string())
}

/// A chosen option, or the abstain sink (always scored incorrect).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Choice {
    Option(u8),
    Abstain,
}

pub const ABSTAIN_LABEL: &str = "ABSTAIN";

impl Choice {
    pub fn from_letter(letter: &str) -> Option<Choice> {
        let mut chars = letter.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Some(Choice::Option(c as u8 - b'A')),
            _ => None,
        }
    }

    pub fn index(self) -> Option<usize> {
        match self {
            Choice::Option(i) => Some(i as usize),
            Choice::Abstain => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            Choice::Option(i) => ((b'A' + i) as char).to_string(),
            Choice::Abstain => ABSTAIN_LABEL.to_string(),
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for Choice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Choice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == ABSTAIN_LABEL {
            return Ok(Choice::Abstain);
        }
        Choice::from_letter(&s).ok_or_else(|| serde::de::Error::custom(format!("bad choice `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub String);

impl UnitId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        UnitId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeSource {
    Parametric,
    Retrieved,
}

/// A fragment of parametric or retrieved knowledge. Depth 0 units are roots;
/// decomposition produces children one level deeper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub unit_id: UnitId,
    pub text: String,
    pub source: KnowledgeSource,
    pub depth: u32,
    pub parent_id: Option<UnitId>,
}

impl KnowledgeUnit {
    pub fn root(unit_id: UnitId, text: impl Into<String>, source: KnowledgeSource) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::DegenerateUnit);
        }
        Ok(KnowledgeUnit { unit_id, text, source, depth: 0, parent_id: None })
    }

    /// Child unit under `self` with the given id. Text is not required to be a
    /// substring of the parent.
    pub fn derive_child(&self, unit_id: UnitId, text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::DegenerateUnit);
        }
        Ok(KnowledgeUnit {
            unit_id,
            text,
            source: self.source,
            depth: self.depth + 1,
            parent_id: Some(self.unit_id.clone()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitIdKind {
    Parametric,
    Retrieved,
    Derived,
}

/// Per-trajectory unit arena. Allocates deterministic ids: `p<n>` for elicited
/// parametric roots, `r<n>` for retrieved roots, `d<n>` for derived units.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnitStore {
    units: BTreeMap<UnitId, KnowledgeUnit>,
    next_parametric: u32,
    next_retrieved: u32,
    next_derived: u32,
}

impl UnitStore {
    pub fn new() -> Self {
        Self { next_retrieved: 1, next_derived: 1, ..Default::default() }
    }

    pub fn next_id(&mut self, kind: UnitIdKind) -> UnitId {
        let (prefix, counter) = match kind {
            UnitIdKind::Parametric => ("p", &mut self.next_parametric),
            UnitIdKind::Retrieved => ("r", &mut self.next_retrieved),
            UnitIdKind::Derived => ("d", &mut self.next_derived),
        };
        *counter += 1;
        UnitId(format!("{prefix}{}", *counter - 1))
    }

    pub fn insert(&mut self, unit: KnowledgeUnit) {
        debug_assert!(!self.units.contains_key(&unit.unit_id), "duplicate unit id {}", unit.unit_id);
        self.units.insert(unit.unit_id.clone(), unit);
    }

    pub fn add_root(&mut self, text: &str, source: KnowledgeSource) -> Result<KnowledgeUnit, DomainError> {
        if text.trim().is_empty() {
            return Err(DomainError::DegenerateUnit);
        }
        let id = self.next_id(match source {
            KnowledgeSource::Parametric => UnitIdKind::Parametric,
            KnowledgeSource::Retrieved => UnitIdKind::Retrieved,
        });
        let unit = KnowledgeUnit::root(id, text, source)?;
        self.insert(unit.clone());
        Ok(unit)
    }

    /// Allocates a fresh id and stores a child of `parent`.
    pub fn derive_child_unit(&mut self, parent: &KnowledgeUnit, text: &str) -> Result<KnowledgeUnit, DomainError> {
        if text.trim().is_empty() {
            return Err(DomainError::DegenerateUnit);
        }
        let id = self.next_id(UnitIdKind::Derived);
        let unit = parent.derive_child(id, text)?;
        self.insert(unit.clone());
        Ok(unit)
    }

    pub fn get(&self, id: &str) -> Result<&KnowledgeUnit, DomainError> {
        self.units
            .get(&UnitId(id.to_string()))
            .ok_or_else(|| DomainError::UnknownUnit(id.to_string()))
    }

    pub fn units(&self) -> &BTreeMap<UnitId, KnowledgeUnit> {
        &self.units
    }

    pub fn into_units(self) -> BTreeMap<UnitId, KnowledgeUnit> {
        self.units
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionKind {
    Elicit,
    Reason,
    Assert,
    Decompose,
    Finish,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Elicit,
        ActionKind::Reason,
        ActionKind::Assert,
        ActionKind::Decompose,
        ActionKind::Finish,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            ActionKind::Elicit => "ELICIT",
            ActionKind::Reason => "REASON",
            ActionKind::Assert => "ASSERT",
            ActionKind::Decompose => "DECOMPOSE",
            ActionKind::Finish => "FINISH",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDirective {
    pub kind: ActionKind,
    pub arguments: Vec<String>,
    #[serde(default)]
    pub forced: bool,
}

impl ActionDirective {
    pub fn new(kind: ActionKind, arguments: Vec<String>) -> Self {
        ActionDirective { kind, arguments, forced: false }
    }

    pub fn finish(choice: &str) -> Self {
        Self::new(ActionKind::Finish, vec![choice.to_string()])
    }

    pub fn forced_decompose(left: &UnitId, right: &UnitId) -> Self {
        ActionDirective {
            kind: ActionKind::Decompose,
            arguments: vec![left.0.clone(), right.0.clone()],
            forced: true,
        }
    }
}

/// Result of an ASSERT step as seen by the engine: the binary verdict plus the
/// complexity of the asserted pair and whether it exceeded the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub delta: u8,
    pub complexity: Option<ComplexityScore>,
    pub complex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub turn: u32,
    pub thought: String,
    pub action: ActionDirective,
    pub observation: String,
    pub usage: UsageRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<Assessment>,
}

/// Ordered thought/action/observation history plus the final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub record_id: String,
    pub method: String,
    pub steps: Vec<TraceStep>,
    pub units: BTreeMap<UnitId, KnowledgeUnit>,
    pub final_answer: Option<Choice>,
    pub solved: bool,
    /// Usage of provider calls that are not part of any step (pre-loop
    /// elicitation, rejected replies, fallback answer generation).
    #[serde(default)]
    pub overhead_usage: UsageRecord,
    #[serde(default)]
    pub rejected_replies: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn new(record_id: &str, method: &str) -> Self {
        Trajectory {
            record_id: record_id.to_string(),
            method: method.to_string(),
            steps: Vec::new(),
            units: BTreeMap::new(),
            final_answer: None,
            solved: false,
            overhead_usage: UsageRecord::default(),
            rejected_replies: 0,
            failure: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Every provider call made for this trajectory, steps plus overhead.
    pub fn total_usage(&self) -> UsageRecord {
        self.steps.iter().fold(self.overhead_usage, |acc, s| acc + s.usage)
    }

    pub fn count_kind(&self, kind: ActionKind) -> usize {
        self.steps.iter().filter(|s| s.action.kind == kind).count()
    }

    /// True iff the unit parent links form a forest consistent with depths.
    pub fn lineage_is_forest(&self) -> bool {
        self.units.values().all(|u| match &u.parent_id {
            None => u.depth == 0,
            Some(pid) => self
                .units
                .get(pid)
                .is_some_and(|p| p.depth + 1 == u.depth && p.source == u.source),
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

/// Token, latency and call counts for one or more provider calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UsageRecord {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_time_ms: u64,
    pub provider_calls: u64,
    /// Calls whose token counts were estimated by whitespace splitting.
    #[serde(default)]
    pub estimated_calls: u64,
}

impl UsageRecord {
    pub fn merge(self, other: UsageRecord) -> UsageRecord {
        UsageRecord {
            input_tokens: self.input_tokens + other.input_tokens,
            output_tokens: self.output_tokens + other.output_tokens,
            wall_time_ms: self.wall_time_ms + other.wall_time_ms,
            provider_calls: self.provider_calls + other.provider_calls,
            estimated_calls: self.estimated_calls + other.estimated_calls,
        }
    }

    pub fn is_estimated(&self) -> bool {
        self.estimated_calls > 0
    }
}

impl Add for UsageRecord {
    type Output = UsageRecord;
    fn add(self, rhs: UsageRecord) -> UsageRecord {
        self.merge(rhs)
    }
}

impl AddAssign for UsageRecord {
    fn add_assign(&mut self, rhs: UsageRecord) {
        *self = self.merge(rhs);
    }
}
