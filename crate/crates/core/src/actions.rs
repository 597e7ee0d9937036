//! The hierarchical action space: ELICIT and REASON gather information,
//! ASSERT checks two knowledge units for consistency, DECOMPOSE splits a
//! coarse ASSERT into finer pairs. Each action renders a pinned template,
//! calls the provider once and parses the reply strictly.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ActionDirective, ActionKind, DomainError, KnowledgeSource, KnowledgeUnit, UnitId, UsageRecord,
};
use crate::prompts::{render, PromptSet};
use crate::provider::{CompletionParams, LanguageModel, ProviderError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("reply contains no numbered reasoning steps")]
    EmptyPath,
    #[error("verdict must be CONSISTENT or CONFLICT on the final line, got `{0}`")]
    VerdictParse(String),
    #[error("decomposition produced {0} pair(s), at least 2 required")]
    DecomposeTooCoarse(usize),
    #[error("unit depth {depth} is at the configured maximum {max_depth}")]
    DepthExceeded { depth: u32, max_depth: u32 },
    #[error("cannot parse action directive: {0}")]
    DirectiveParse(String),
}

impl ActionError {
    pub fn is_provider(&self) -> bool {
        matches!(self, ActionError::Provider(_))
    }
}

/// Binary consistency verdict: `delta == 1` means a conflict was detected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictVerdict {
    pub delta: u8,
    pub rationale: String,
}

impl ConflictVerdict {
    pub fn is_conflict(&self) -> bool {
        self.delta == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub steps: Vec<String>,
    pub over_unit: UnitId,
}

/// An action result together with the usage of the call that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Performed<T> {
    pub value: T,
    pub usage: UsageRecord,
    pub reply: String,
}

/// Everything an action needs to call the model.
pub struct ActionContext<'a> {
    pub provider: &'a dyn LanguageModel,
    pub params: &'a CompletionParams,
    pub prompts: &'a PromptSet,
    pub question: &'a str,
}

impl ActionContext<'_> {
    fn call(&self, prompt: String) -> Result<(String, UsageRecord), ActionError> {
        let r = self.provider.complete(&prompt, self.params)?;
        Ok((r.text, r.usage))
    }
}

/// Parametric knowledge for `question`, from the model alone.
pub fn elicit(ctx: &ActionContext<'_>, question: &str, id: UnitId) -> Result<Performed<KnowledgeUnit>, ActionError> {
    if question.trim().is_empty() {
        return Err(ActionError::Precondition("question must be non-empty".into()));
    }
    let (reply, usage) = ctx.call(render(&ctx.prompts.elicit, &[("question", question)]))?;
    let unit = KnowledgeUnit::root(id, reply.trim(), KnowledgeSource::Parametric)?;
    Ok(Performed { value: unit, usage, reply })
}

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d+\s*[.)]\s*(\S.*?)\s*$").unwrap());

pub fn parse_reasoning_steps(reply: &str) -> Vec<String> {
    reply
        .lines()
        .filter_map(|l| NUMBERED.captures(l).map(|c| c[1].to_string()))
        .collect()
}

pub fn reason(ctx: &ActionContext<'_>, unit: &KnowledgeUnit) -> Result<Performed<ReasoningPath>, ActionError> {
    if unit.text.trim().is_empty() {
        return Err(ActionError::Precondition("unit text must be non-empty".into()));
    }
    let prompt = render(&ctx.prompts.reason, &[("question", ctx.question), ("knowledge_a", &unit.text)]);
    let (reply, usage) = ctx.call(prompt)?;
    let steps = parse_reasoning_steps(&reply);
    if steps.is_empty() {
        return Err(ActionError::EmptyPath);
    }
    Ok(Performed { value: ReasoningPath { steps, over_unit: unit.unit_id.clone() }, usage, reply })
}

/// Reads the verdict token from the last non-empty line.
pub fn parse_verdict(reply: &str) -> Result<ConflictVerdict, ActionError> {
    let lines: Vec<&str> = reply.lines().filter(|l| !l.trim().is_empty()).collect();
    let Some((last, body)) = lines.split_last() else {
        return Err(ActionError::VerdictParse(String::new()));
    };
    let delta = match last.trim() {
        "CONSISTENT" => 0,
        "CONFLICT" => 1,
        other => return Err(ActionError::VerdictParse(other.to_string())),
    };
    Ok(ConflictVerdict { delta, rationale: body.iter().map(|l| l.trim()).collect::<Vec<_>>().join(" ") })
}

pub fn assert_conflict(
    ctx: &ActionContext<'_>,
    left: &KnowledgeUnit,
    right: &KnowledgeUnit,
) -> Result<Performed<ConflictVerdict>, ActionError> {
    if left.unit_id == right.unit_id {
        return Err(ActionError::Precondition(format!("cannot assert `{}` against itself", left.unit_id)));
    }
    let prompt = render(
        &ctx.prompts.assert,
        &[("question", ctx.question), ("knowledge_a", &left.text), ("knowledge_b", &right.text)],
    );
    let (reply, usage) = ctx.call(prompt)?;
    let value = parse_verdict(&reply)?;
    Ok(Performed { value, usage, reply })
}

static PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*]\s*|\d+\s*[.)]\s*)?pair\s*:\s*(.*?)\s*\|\|\s*(.*?)\s*$").unwrap()
});

/// `(left fragment, right fragment)` for every well-formed `PAIR:` line.
pub fn parse_pairs(reply: &str) -> Vec<(String, String)> {
    reply
        .lines()
        .filter_map(|l| PAIR.captures(l))
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains("||"))
        .collect()
}

/// Splits the assertion over `(left, right)` into finer pairs. Each returned
/// left unit is a child of `left`, each right unit a child of `right`.
/// `next_id` supplies fresh unit ids.
pub fn decompose(
    ctx: &ActionContext<'_>,
    left: &KnowledgeUnit,
    right: &KnowledgeUnit,
    max_depth: u32,
    next_id: &mut dyn FnMut() -> UnitId,
) -> Result<Performed<Vec<(KnowledgeUnit, KnowledgeUnit)>>, ActionError> {
    if left.text.trim().is_empty() || right.text.trim().is_empty() {
        return Err(ActionError::Precondition("both units must be non-empty".into()));
    }
    if left.unit_id == right.unit_id {
        return Err(ActionError::Precondition(format!("cannot decompose `{}` against itself", left.unit_id)));
    }
    let depth = left.depth.max(right.depth);
    if depth >= max_depth {
        return Err(ActionError::DepthExceeded { depth, max_depth });
    }
    let prompt = render(
        &ctx.prompts.decompose,
        &[("question", ctx.question), ("knowledge_a", &left.text), ("knowledge_b", &right.text)],
    );
    let (reply, usage) = ctx.call(prompt)?;
    let fragments = parse_pairs(&reply);
    if fragments.len() < 2 {
        return Err(ActionError::DecomposeTooCoarse(fragments.len()));
    }
    let mut pairs = Vec::with_capacity(fragments.len());
    for (a, b) in fragments {
        let l = left.derive_child(next_id(), a)?;
        let r = right.derive_child(next_id(), b)?;
        pairs.push((l, r));
    }
    Ok(Performed { value: pairs, usage, reply })
}

fn strip_action_prefix(line: &str) -> Option<&str> {
    match line.get(..7) {
        Some(p) if p.eq_ignore_ascii_case("action:") => Some(&line[7..]),
        _ => None,
    }
}

/// Parses the last `Action: KIND[arg || ...]` line of a reply.
pub fn parse_action_directive(raw: &str) -> Result<ActionDirective, ActionError> {
    let err = |m: String| ActionError::DirectiveParse(m);
    let line = raw
        .lines()
        .rev()
        .map(str::trim)
        .find_map(strip_action_prefix)
        .ok_or_else(|| err("no `Action:` line".into()))?;
    let body = line.trim();
    let open = body.find('[').ok_or_else(|| err(format!("missing `[` in `{body}`")))?;
    if !body.ends_with(']') {
        return Err(err(format!("missing closing `]` in `{body}`")));
    }
    let name = body[..open].trim();
    let kind = ActionKind::ALL
        .into_iter()
        .find(|k| k.keyword().eq_ignore_ascii_case(name))
        .ok_or_else(|| err(format!("unknown action `{name}`")))?;
    let inner = body[open + 1..body.len() - 1].trim();
    let mut arguments: Vec<String> = if inner.is_empty() {
        Vec::new()
    } else {
        inner.split("||").map(|a| a.trim().to_string()).collect()
    };
    if arguments.iter().any(String::is_empty) {
        return Err(err("empty argument".into()));
    }
    let arity_ok = match kind {
        ActionKind::Elicit => arguments.len() <= 1,
        ActionKind::Reason => arguments.len() == 1,
        ActionKind::Assert | ActionKind::Decompose => arguments.len() == 2,
        ActionKind::Finish => {
            let ok = arguments.len() == 1
                && arguments[0].len() == 1
                && arguments[0].as_bytes()[0].is_ascii_alphabetic();
            if ok {
                arguments[0] = arguments[0].to_ascii_uppercase();
            }
            ok
        }
    };
    if !arity_ok {
        return Err(err(format!("bad arguments for {kind}: {arguments:?}")));
    }
    Ok(ActionDirective::new(kind, arguments))
}

pub fn render_directive(d: &ActionDirective) -> String {
    format!("Action: {}[{}]", d.kind, d.arguments.join(" || "))
}

/// The `Thought:` text of a reply, or everything before the action line.
pub fn parse_thought(raw: &str) -> String {
    let mut lines = Vec::new();
    for line in raw.lines() {
        let t = line.trim();
        if strip_action_prefix(t).is_some() {
            break;
        }
        lines.push(t);
    }
    let text = lines.join(" ");
    let text = text.trim();
    match text.get(..8) {
        Some(p) if p.eq_ignore_ascii_case("thought:") => text[8..].trim().to_string(),
        _ => text.to_string(),
    }
}
