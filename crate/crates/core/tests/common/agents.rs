use std::sync::Mutex;

use kcqa_core::provider::{CompletionParams, CompletionResult, LanguageModel, ProviderError};
use kcqa_core::UsageRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Agent,
    Elicit,
    Reason,
    Assert,
    Decompose,
    Answer,
    Other,
}

pub fn prompt_kind(prompt: &str) -> PromptKind {
    const MARKERS: [(&str, PromptKind); 6] = [
        ("You are answering a multiple-choice question whose", PromptKind::Agent),
        ("Answer from your own knowledge only.", PromptKind::Elicit),
        ("Write the reasoning path", PromptKind::Reason),
        ("Compare the two pieces of knowledge", PromptKind::Assert),
        ("The two pieces of knowledge below are too coarse", PromptKind::Decompose),
        ("Based on the reasoning history", PromptKind::Answer),
    ];
    MARKERS.iter().find(|(m, _)| prompt.starts_with(m)).map_or(PromptKind::Other, |(_, k)| *k)
}

/// Unit ids listed in the agent prompt's knowledge-unit section.
pub fn listed_units(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| {
            let (id, rest) = l.split_once(' ')?;
            let mut chars = id.chars();
            let head = chars.next()?;
            (matches!(head, 'p' | 'r' | 'd') && chars.all(|c| c.is_ascii_digit()) && rest.starts_with('['))
                .then(|| id.to_string())
        })
        .collect()
}

pub fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| format!("w{}", rng.random_range(0..50))).collect::<Vec<_>>().join(" ")
}

fn reply(text: String) -> Result<CompletionResult, ProviderError> {
    let usage = UsageRecord { output_tokens: text.split_whitespace().count() as u64, provider_calls: 1, ..Default::default() };
    Ok(CompletionResult { text, usage })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    /// Any action, any verdict, malformed replies included.
    Random,
    /// Always CONFLICT, always tries to split the newest units, and half of
    /// all splits return claims longer than their inputs.
    Adversarial,
}

/// Seeded model double that answers each prompt type in character. It is
/// stateful, so runs are reproducible only when driven sequentially.
pub struct FuzzAgent {
    rng: Mutex<ChaCha8Rng>,
    style: Style,
}

impl FuzzAgent {
    pub fn new(seed: u64, style: Style) -> Self {
        FuzzAgent { rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)), style }
    }

    fn pick_pair(rng: &mut ChaCha8Rng, ids: &[String]) -> (String, String) {
        let pick = |rng: &mut ChaCha8Rng| {
            if ids.is_empty() || rng.random_bool(0.05) {
                "zz9".to_string()
            } else {
                ids[rng.random_range(0..ids.len())].clone()
            }
        };
        (pick(rng), pick(rng))
    }

    fn random(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        match prompt_kind(prompt) {
            PromptKind::Elicit => words(rng, 1, 30),
            PromptKind::Agent => {
                let ids = listed_units(prompt);
                let (a, b) = Self::pick_pair(rng, &ids);
                match rng.random_range(0..100) {
                    0..45 => format!("Thought: check\nAction: ASSERT[{a} || {b}]"),
                    45..60 => format!("Thought: split\nAction: DECOMPOSE[{a} || {b}]"),
                    60..70 => format!("Action: REASON[{a}]"),
                    70..75 => "Action: ELICIT[]".to_string(),
                    75..85 => format!("Action: FINISH[{}]", ['A', 'B', 'C', 'D', 'E', 'Q'][rng.random_range(0..6)]),
                    85..92 => "I am not sure what to do.".to_string(),
                    _ => format!("Action: ASSERT[{a}]"),
                }
            }
            PromptKind::Assert => match rng.random_range(0..10) {
                0..5 => format!("{}\nCONFLICT", words(rng, 0, 5)),
                5..9 => format!("{}\nCONSISTENT", words(rng, 0, 5)),
                _ => "unclear".to_string(),
            },
            PromptKind::Decompose => {
                let n = rng.random_range(0..4);
                (0..n)
                    .map(|_| format!("PAIR: {} || {}", words(rng, 1, 20), words(rng, 1, 20)))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            PromptKind::Reason => format!("1. {}\n2. {}", words(rng, 1, 6), words(rng, 1, 6)),
            PromptKind::Answer => format!("Answer: {}", ['A', 'B'][rng.random_range(0..2)]),
            PromptKind::Other => String::new(),
        }
    }

    fn adversarial(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        match prompt_kind(prompt) {
            PromptKind::Elicit => words(rng, 20, 40),
            PromptKind::Agent => {
                // derived ids come in pairs (d1, d2), (d3, d4), ...; target the newest
                let newest = listed_units(prompt)
                    .iter()
                    .filter_map(|id| id.strip_prefix('d')?.parse::<u32>().ok())
                    .max()
                    .filter(|n| n % 2 == 0);
                let (a, b) = match newest {
                    Some(n) => (format!("d{}", n - 1), format!("d{n}")),
                    None => ("p0".to_string(), "r1".to_string()),
                };
                if rng.random_bool(0.5) {
                    format!("Action: DECOMPOSE[{a} || {b}]")
                } else {
                    format!("Action: ASSERT[{a} || {b}]")
                }
            }
            PromptKind::Assert => "CONFLICT".to_string(),
            PromptKind::Decompose => {
                let n = rng.random_range(2..4);
                let (lo, hi) = if rng.random_bool(0.5) { (60, 80) } else { (1, 2) };
                (0..n).map(|_| format!("PAIR: {} || {}", words(rng, lo, hi), words(rng, lo, hi))).collect::<Vec<_>>().join("\n")
            }
            PromptKind::Reason => format!("1. {}", words(rng, 40, 60)),
            PromptKind::Answer => "Answer: A".to_string(),
            PromptKind::Other => String::new(),
        }
    }
}

impl LanguageModel for FuzzAgent {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<CompletionResult, ProviderError> {
        let mut rng = self.rng.lock().unwrap();
        let text = match self.style {
            Style::Random => self.random(&mut rng, prompt),
            Style::Adversarial => self.adversarial(&mut rng, prompt),
        };
        reply(text)
    }

    fn order_sensitive(&self) -> bool {
        true
    }
}
