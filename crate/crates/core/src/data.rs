//! Dataset loading, validation, stratified sampling and length bucketing.
//!
//! Dataset files are JSON Lines, one [`DatasetRecord`] per line. Upstream
//! benchmark exports are converted by the adapters in [`adapters`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::token_length;
use crate::domain::{validate_record, ConflictType, DatasetRecord, RawRecord, Violations};

pub const SCHEMA_VERSION: &str = "1";

const REQUIRED_FIELDS: [&str; 5] = ["id", "question", "options", "gold_index", "conflict_type"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: missing or malformed field `{field}`")]
    SchemaError { line: usize, field: String },
    #[error("line {line}: {violations}")]
    Invalid { line: usize, violations: Violations },
    #[error("insufficient {conflict_type} records: have {have}, want {want}")]
    InsufficientData { conflict_type: ConflictType, have: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: String,
    pub record_count: usize,
    pub conflict_type_counts: BTreeMap<ConflictType, usize>,
    pub schema_version: String,
}

impl DatasetManifest {
    pub fn of(path: &Path, records: &[DatasetRecord]) -> Self {
        let mut counts = BTreeMap::new();
        for r in records {
            *counts.entry(r.conflict_type).or_insert(0) += 1;
        }
        DatasetManifest {
            path: path.display().to_string(),
            record_count: records.len(),
            conflict_type_counts: counts,
            schema_version: SCHEMA_VERSION.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Parses one JSON line. Line numbers are 1-based.
pub fn parse_line(text: &str, line: usize) -> Result<DatasetRecord, DataError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|_| DataError::SchemaError { line, field: "<json>".into() })?;
    let obj = value.as_object().ok_or_else(|| DataError::SchemaError { line, field: "<object>".into() })?;
    if let Some(field) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(DataError::SchemaError { line, field: field.to_string() });
    }
    let raw: RawRecord = serde_json::from_value(value).map_err(|e| DataError::SchemaError {
        line,
        field: REQUIRED_FIELDS
            .iter()
            .chain(["evidence", "domain_tag", "source_dataset"].iter())
            .find(|f| e.to_string().contains(**f))
            .map_or_else(|| e.to_string(), |f| f.to_string()),
    })?;
    let violations = validate_record(&raw);
    if !violations.is_empty() {
        return Err(DataError::Invalid { line, violations: Violations(violations) });
    }
    DatasetRecord::try_from(raw).map_err(|violations| DataError::Invalid { line, violations })
}

/// Loads and validates every line; the first bad line aborts the load.
pub fn load_dataset(path: &Path) -> Result<(Vec<DatasetRecord>, DatasetManifest), DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(&line, i + 1)?);
    }
    let manifest = DatasetManifest::of(path, &records);
    Ok((records, manifest))
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records always serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Draws `n_per_type` records without replacement from every conflict type
/// present in `records`. Candidates are ordered by id before drawing, so the
/// result depends only on the record set and the seed. Output is sorted by id.
pub fn sample_stratified(records: &[DatasetRecord], n_per_type: usize, seed: u64) -> Result<Vec<DatasetRecord>, DataError> {
    let mut by_type: BTreeMap<ConflictType, Vec<&DatasetRecord>> = BTreeMap::new();
    for r in records {
        by_type.entry(r.conflict_type).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_per_type * by_type.len());
    for (ct, mut group) in by_type {
        if group.len() < n_per_type {
            return Err(DataError::InsufficientData { conflict_type: ct, have: group.len(), want: n_per_type });
        }
        group.sort_by(|a, b| a.id.cmp(&b.id));
        out.extend(sample(&mut rng, group.len(), n_per_type).into_iter().map(|i| group[i].clone()));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LengthBucket {
    #[serde(rename = "0-100")]
    B0To100,
    #[serde(rename = "100-200")]
    B100To200,
    #[serde(rename = "200-300")]
    B200To300,
    #[serde(rename = "300-400")]
    B300To400,
    #[serde(rename = "400+")]
    B400Plus,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 5] = [
        LengthBucket::B0To100,
        LengthBucket::B100To200,
        LengthBucket::B200To300,
        LengthBucket::B300To400,
        LengthBucket::B400Plus,
    ];

    /// Half-open `[lo, hi)` intervals, the last one unbounded.
    pub fn of_length(tokens: usize) -> Self {
        match tokens {
            0..100 => LengthBucket::B0To100,
            100..200 => LengthBucket::B100To200,
            200..300 => LengthBucket::B200To300,
            300..400 => LengthBucket::B300To400,
            _ => LengthBucket::B400Plus,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LengthBucket::B0To100 => "0-100",
            LengthBucket::B100To200 => "100-200",
            LengthBucket::B200To300 => "200-300",
            LengthBucket::B300To400 => "300-400",
            LengthBucket::B400Plus => "400+",
        }
    }
}

impl fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Token length of the concatenated evidence.
pub fn evidence_length(record: &DatasetRecord) -> usize {
    token_length(&record.evidence_text())
}

pub fn bucket_of(record: &DatasetRecord) -> LengthBucket {
    LengthBucket::of_length(evidence_length(record))
}

pub fn bucket_by_length(records: &[DatasetRecord]) -> BTreeMap<LengthBucket, BTreeSet<String>> {
    let mut out: BTreeMap<LengthBucket, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        out.entry(bucket_of(r)).or_default().insert(r.id.clone());
    }
    out
}

/// Converters from upstream benchmark exports.
///
/// ConflictBank (`conflictbank`), one JSON object per line:
///
/// | upstream field                          | record field      |
/// |-----------------------------------------|-------------------|
/// | `id` / `qid`                            | `id`              |
/// | `question`                              | `question`        |
/// | `options` / `choices`                   | `options`         |
/// | `answer` (letter or 0-based index)      | `gold_index`      |
/// | `evidence` / `conflict_evidence` (text list) | `evidence` with ids `e1..` |
/// | `conflict_type` / `type`                | `conflict_type`   |
/// | `domain`                                | `domain_tag`      |
///
/// KRE (`kre`):
///
/// | upstream field                  | record field    |
/// |---------------------------------|-----------------|
/// | `id`                            | `id`            |
/// | `question`                      | `question`      |
/// | `choices` / `options`           | `options`       |
/// | `answer` / `label`              | `gold_index`    |
/// | `negative_knowledge` / `context`| `evidence`      |
/// | (fixed)                         | `conflict_type` = misinformation |
///
/// Conflict type strings are matched case-insensitively on their first word,
/// so `"Temporal Conflict"` maps to temporal.
pub mod adapters {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Upstream {
        ConflictBank,
        Kre,
    }

    impl std::str::FromStr for Upstream {
        type Err = String;
        fn from_str(s: &str) -> Result<Self, Self::Err> {
            match s.to_ascii_lowercase().as_str() {
                "conflictbank" => Ok(Upstream::ConflictBank),
                "kre" => Ok(Upstream::Kre),
                other => Err(format!("unknown upstream format `{other}` (expected conflictbank or kre)")),
            }
        }
    }

    #[derive(Debug, Deserialize)]
    #[serde(untagged)]
    enum Answer {
        Index(i64),
        Letter(String),
    }

    impl Answer {
        fn index(&self) -> i64 {
            match self {
                Answer::Index(i) => *i,
                Answer::Letter(s) => {
                    let s = s.trim().trim_start_matches('(').trim_end_matches([')', '.']);
                    match s.as_bytes() {
                        [b @ b'A'..=b'Z'] => (*b - b'A') as i64,
                        _ => s.parse().unwrap_or(-1),
                    }
                }
            }
        }
    }

    #[derive(Debug, Deserialize)]
    #[serde(untagged)]
    enum Texts {
        One(String),
        Many(Vec<String>),
    }

    impl Texts {
        fn into_vec(self) -> Vec<String> {
            match self {
                Texts::One(s) => vec![s],
                Texts::Many(v) => v,
            }
        }
    }

    #[derive(Debug, Deserialize)]
    struct ConflictBankRow {
        #[serde(alias = "qid")]
        id: serde_json::Value,
        question: String,
        #[serde(alias = "choices")]
        options: Vec<String>,
        answer: Answer,
        #[serde(default, alias = "conflict_evidence")]
        evidence: Option<Texts>,
        #[serde(alias = "type")]
        conflict_type: String,
        #[serde(default)]
        domain: Option<String>,
    }

    #[derive(Debug, Deserialize)]
    struct KreRow {
        id: serde_json::Value,
        question: String,
        #[serde(alias = "options")]
        choices: Vec<String>,
        #[serde(alias = "label")]
        answer: Answer,
        #[serde(default, alias = "context")]
        negative_knowledge: Option<Texts>,
    }

    fn id_string(v: serde_json::Value) -> String {
        match v {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        }
    }

    fn fragments(texts: Option<Texts>) -> Vec<crate::domain::EvidenceFragment> {
        texts
            .map(Texts::into_vec)
            .unwrap_or_default()
            .into_iter()
            .enumerate()
            .map(|(i, text)| crate::domain::EvidenceFragment { fragment_id: format!("e{}", i + 1), text })
            .collect()
    }

    pub fn normalize_conflict_type(s: &str) -> String {
        let first = s.split(|c: char| !c.is_ascii_alphabetic()).find(|w| !w.is_empty()).unwrap_or("");
        first.to_ascii_lowercase()
    }

    pub fn convert_line(format: Upstream, text: &str, line: usize) -> Result<DatasetRecord, DataError> {
        let schema = |e: serde_json::Error| DataError::SchemaError { line, field: e.to_string() };
        let raw = match format {
            Upstream::ConflictBank => {
                let row: ConflictBankRow = serde_json::from_str(text).map_err(schema)?;
                RawRecord {
                    id: id_string(row.id),
                    question: row.question,
                    gold_index: row.answer.index(),
                    options: row.options,
                    evidence: fragments(row.evidence),
                    conflict_type: normalize_conflict_type(&row.conflict_type),
                    domain_tag: row.domain,
                    source_dataset: "conflictbank".into(),
                }
            }
            Upstream::Kre => {
                let row: KreRow = serde_json::from_str(text).map_err(schema)?;
                RawRecord {
                    id: id_string(row.id),
                    question: row.question,
                    gold_index: row.answer.index(),
                    options: row.choices,
                    evidence: fragments(row.negative_knowledge),
                    conflict_type: ConflictType::Misinformation.as_str().into(),
                    domain_tag: None,
                    source_dataset: "kre".into(),
                }
            }
        };
        let violations = validate_record(&raw);
        if !violations.is_empty() {
            return Err(DataError::Invalid { line, violations: Violations(violations) });
        }
        DatasetRecord::try_from(raw).map_err(|violations| DataError::Invalid { line, violations })
    }

    pub fn convert_file(format: Upstream, path: &Path) -> Result<Vec<DatasetRecord>, DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| convert_line(format, l, i + 1))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::EvidenceFragment;
    use proptest::prelude::*;

    fn rec(id: &str, ct: ConflictType, tokens: usize) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            question: format!("question {id}?"),
            options: vec!["yes".into(), "no".into()],
            gold_index: 0,
            evidence: if tokens == 0 {
                vec![]
            } else {
                vec![EvidenceFragment { fragment_id: "e1".into(), text: vec!["tok"; tokens].join(" ") }]
            },
            conflict_type: ct,
            domain_tag: None,
            source_dataset: "test".into(),
        }
    }

    fn corpus(per_type: usize) -> Vec<DatasetRecord> {
        let mut v = Vec::new();
        for ct in [ConflictType::Misinformation, ConflictType::Temporal, ConflictType::Semantic] {
            for i in 0..per_type {
                v.push(rec(&format!("{}-{i:04}", ct.as_str()), ct, i % 7));
            }
        }
        v
    }

    #[test]
    fn load_round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut records = corpus(1);
        records.push(rec("plain", ConflictType::None, 3));
        write_dataset(&path, &records).unwrap();
        let (loaded, manifest) = load_dataset(&path).unwrap();
        assert_eq!(loaded, records);
        assert_eq!(manifest.record_count, 4);
        assert_eq!(manifest.conflict_type_counts[&ConflictType::None], 1);
        assert_eq!(manifest.conflict_type_counts.values().sum::<usize>(), manifest.record_count);
    }

    #[test]
    fn missing_options_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = serde_json::to_string(&rec("a", ConflictType::Temporal, 1)).unwrap();
        let mut bad: serde_json::Value = serde_json::from_str(&good).unwrap();
        bad.as_object_mut().unwrap().remove("options");
        std::fs::write(&path, format!("{good}\n{bad}\n{good}\n")).unwrap();
        match load_dataset(&path) {
            Err(DataError::SchemaError { line, field }) => assert_eq!((line, field.as_str()), (2, "options")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_record_aborts() {
        let mut raw = RawRecord::from(rec("a", ConflictType::Temporal, 1));
        raw.gold_index = 9;
        let line = serde_json::to_string(&raw).unwrap();
        assert!(matches!(parse_line(&line, 1), Err(DataError::Invalid { line: 1, .. })));
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(load_dataset(Path::new("/nonexistent/x.jsonl")), Err(DataError::Io { .. })));
    }

    #[test]
    fn stratified_sampling() {
        let records = corpus(400);
        let a = sample_stratified(&records, 300, 7).unwrap();
        let b = sample_stratified(&records, 300, 7).unwrap();
        assert_eq!(a.len(), 900);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for ct in [ConflictType::Misinformation, ConflictType::Temporal, ConflictType::Semantic] {
            assert_eq!(a.iter().filter(|r| r.conflict_type == ct).count(), 300);
        }
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn insufficient_data() {
        let mut records = corpus(300);
        records.retain(|r| r.conflict_type != ConflictType::Temporal || r.id.as_str() < "temporal-0200");
        match sample_stratified(&records, 300, 1) {
            Err(DataError::InsufficientData { conflict_type, have, want }) => {
                assert_eq!((conflict_type, have, want), (ConflictType::Temporal, 200, 300))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucket_of(&rec("a", ConflictType::None, 50)).label(), "0-100");
        assert_eq!(bucket_of(&rec("a", ConflictType::None, 100)).label(), "100-200");
        assert_eq!(bucket_of(&rec("a", ConflictType::None, 0)).label(), "0-100");
        assert_eq!(bucket_of(&rec("a", ConflictType::None, 399)).label(), "300-400");
        assert_eq!(bucket_of(&rec("a", ConflictType::None, 4000)).label(), "400+");
        assert_eq!(serde_json::to_string(&LengthBucket::B400Plus).unwrap(), "\"400+\"");
    }

    #[test]
    fn conflictbank_adapter() {
        let line = r#"{"qid": 17, "question": "Who?", "choices": ["x", "y", "z"], "answer": "B",
            "conflict_evidence": ["one", "two"], "type": "Temporal Conflict", "domain": "sports"}"#;
        let r = adapters::convert_line(adapters::Upstream::ConflictBank, line, 1).unwrap();
        assert_eq!(r.id, "17");
        assert_eq!(r.gold_index, 1);
        assert_eq!(r.conflict_type, ConflictType::Temporal);
        assert_eq!(r.evidence[1].fragment_id, "e2");
        assert_eq!(r.domain_tag.as_deref(), Some("sports"));
    }

    #[test]
    fn kre_adapter() {
        let line = r#"{"id": "k1", "question": "Q?", "choices": ["a", "b"], "label": 0, "context": "text"}"#;
        let r = adapters::convert_line(adapters::Upstream::Kre, line, 3).unwrap();
        assert_eq!(r.conflict_type, ConflictType::Misinformation);
        assert_eq!(r.evidence.len(), 1);
        let bad = r#"{"id": "k1", "question": "Q?", "choices": ["a", "b"], "label": 5}"#;
        assert!(matches!(adapters::convert_line(adapters::Upstream::Kre, bad, 3), Err(DataError::Invalid { line: 3, .. })));
    }

    proptest! {
        #[test]
        fn sampling_has_no_duplicates(n in 1usize..50, seed in any::<u64>()) {
            let records = corpus(50);
            let s = sample_stratified(&records, n, seed).unwrap();
            let ids: BTreeSet<_> = s.iter().map(|r| r.id.clone()).collect();
            prop_assert_eq!(ids.len(), s.len());
        }

        #[test]
        fn bucketing_is_a_partition(lengths in proptest::collection::vec(0usize..600, 0..60)) {
            let records: Vec<_> = lengths.iter().enumerate()
                .map(|(i, l)| rec(&format!("r{i}"), ConflictType::None, *l)).collect();
            let buckets = bucket_by_length(&records);
            let total: usize = buckets.values().map(BTreeSet::len).sum();
            prop_assert_eq!(total, records.len());
            let union: BTreeSet<_> = buckets.values().flatten().cloned().collect();
            prop_assert_eq!(union.len(), records.len());
        }

        #[test]
        fn write_load_identity(n in 0usize..20, toks in 0usize..30) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.jsonl");
            let records: Vec<_> = (0..n).map(|i| rec(&format!("r{i}"), ConflictType::ALL[i % 4], toks)).collect();
            write_dataset(&path, &records).unwrap();
            let (loaded, _) = load_dataset(&path).unwrap();
            prop_assert_eq!(loaded, records);
        }
    }
}
