//! Pinned prompt templates and placeholder substitution.
//!
//! Templates are plain UTF-8 text with `{name}` placeholders. Substitution is
//! a single pass over the template: values are inserted verbatim, and text
//! inside inserted values is never re-scanned.

use std::collections::BTreeMap;
use std::path::Path;

use crate::domain::{option_label, DatasetRecord};

pub const PROMPT_VERSION: &str = "v1";

macro_rules! templates {
    ($($field:ident => $file:literal),* $(,)?) => {
        /// The full template set used by actions, the engine, baselines and the judge.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct PromptSet {
            pub version: String,
            $(pub $field: String,)*
        }

        impl PromptSet {
            pub fn builtin() -> Self {
                PromptSet {
                    version: PROMPT_VERSION.to_string(),
                    $($field: include_str!(concat!("../prompts/", $file)).to_string(),)*
                }
            }

            /// Loads templates from `dir`, keeping the builtin text for any file
            /// that is absent.
            pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
                let mut set = Self::builtin();
                set.version = format!("{}+{}", PROMPT_VERSION, dir.display());
                $(
                    let path = dir.join($file);
                    if path.exists() {
                        set.$field = std::fs::read_to_string(&path)?;
                    }
                )*
                Ok(set)
            }
        }
    };
}

templates! {
    agent => "agent.txt",
    elicit => "elicit.txt",
    reason => "reason.txt",
    assert => "assert.txt",
    decompose => "decompose.txt",
    answer => "answer.txt",
    judge => "judge.txt",
    end_to_end => "end_to_end.txt",
    few_shot => "few_shot.txt",
    few_shot_exemplars => "few_shot_exemplars.txt",
    cot => "cot.txt",
    self_ask => "self_ask.txt",
    comparative_closed_book => "comparative_closed_book.txt",
    comparative_reconcile => "comparative_reconcile.txt",
    gkp_generation => "gkp_generation.txt",
    gkp_answering => "gkp_answering.txt",
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Replaces every `{name}` whose name is a key of `values`. Unknown
/// placeholders are left untouched.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let map: BTreeMap<&str, &str> = values.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if map.contains_key(&after[..close]) => {
                out.push_str(map[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `A. first option` lines.
pub fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", option_label(i as i64).expect("at most 26 options"), o))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_evidence(record: &DatasetRecord) -> String {
    if record.evidence.is_empty() {
        return "(no evidence retrieved)".to_string();
    }
    record
        .evidence
        .iter()
        .map(|e| format!("[{}] {}", e.fragment_id, e.text))
        .collect::<Vec<_>>()
        .join("\n")
}
