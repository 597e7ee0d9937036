//! The budgeted thought -> action -> observation loop.
//!
//! Before the loop the model's parametric knowledge is elicited (`p0`) and
//! every evidence fragment becomes a retrieved root unit (`r1..rm`). Each turn
//! the model picks one action; its observation is appended to the history.
//! When an ASSERT detects a conflict on a pair whose complexity is strictly
//! above the threshold, the next turn is overridden with a forced DECOMPOSE of
//! that pair. The loop stops on a valid FINISH or when the turn budget is spent,
//! after which one extra call produces the fallback answer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{
    self, parse_action_directive, parse_thought, render_directive, ActionContext, ActionError,
};
use crate::complexity::{
    should_decompose, verify_monotone, ComplexityScore, ComplexityScorer, MonotoneVerdict, Threshold,
};
use crate::domain::{
    ActionDirective, ActionKind, Assessment, Choice, DatasetRecord, KnowledgeSource, KnowledgeUnit, TraceStep,
    Trajectory, UnitId, UnitIdKind, UnitStore, UsageRecord,
};
use crate::eval::extract_choice;
use crate::prompts::{format_options, render, PromptSet};
use crate::provider::{CompletionParams, LanguageModel};

pub const METHOD_NAME: &str = "micro_act";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("turn_budget must be at least 1")]
    ZeroBudget,
    #[error("max_depth must be at least 1")]
    ZeroDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub turn_budget: u32,
    pub max_depth: u32,
    pub threshold: Threshold,
    pub force_split_enabled: bool,
    /// Demote branches whose children do not score strictly below the parent.
    pub monotone_gating: bool,
    pub method: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            turn_budget: 10,
            max_depth: 4,
            threshold: ComplexityScore::tokens(100.0),
            force_split_enabled: true,
            monotone_gating: true,
            method: METHOD_NAME.to_string(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.turn_budget == 0 {
            return Err(EngineError::ZeroBudget);
        }
        if self.max_depth == 0 {
            return Err(EngineError::ZeroDepth);
        }
        Ok(())
    }
}

/// True iff the last step is a FINISH naming an in-range option.
pub fn is_solved(history: &Trajectory, n_options: usize) -> bool {
    history.steps.last().is_some_and(|s| finish_choice(&s.action, n_options).is_some())
}

fn finish_choice(action: &ActionDirective, n_options: usize) -> Option<Choice> {
    if action.kind != ActionKind::Finish {
        return None;
    }
    let choice = Choice::from_letter(action.arguments.first()?)?;
    (choice.index()? < n_options).then_some(choice)
}

pub fn render_history(steps: &[TraceStep]) -> String {
    if steps.is_empty() {
        return "(none yet)".to_string();
    }
    steps
        .iter()
        .map(|s| {
            let forced = if s.action.forced { " (forced split)" } else { "" };
            format!(
                "Turn {}:\nThought: {}\n{}{}\nObservation: {}",
                s.turn,
                s.thought,
                render_directive(&s.action),
                forced,
                s.observation
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_units(store: &UnitStore) -> String {
    store
        .units()
        .values()
        .map(|u| {
            let source = match u.source {
                KnowledgeSource::Parametric => "parametric",
                KnowledgeSource::Retrieved => "retrieved",
            };
            format!("{} [{source}, depth {}]: {}", u.unit_id, u.depth, u.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Final answer: the FINISH argument when solved, otherwise one
/// answer-generation call over the full history, otherwise abstain.
pub fn finalize_answer(
    history: &Trajectory,
    record: &DatasetRecord,
    provider: &dyn LanguageModel,
    prompts: &PromptSet,
    params: &CompletionParams,
) -> (Choice, UsageRecord) {
    let n = record.options.len();
    if let Some(choice) = history.steps.last().and_then(|s| finish_choice(&s.action, n)) {
        return (choice, UsageRecord::default());
    }
    let prompt = render(
        &prompts.answer,
        &[
            ("question", &record.question),
            ("options", &format_options(&record.options)),
            ("history", &render_history(&history.steps)),
        ],
    );
    match provider.complete(&prompt, params) {
        Ok(r) => (extract_choice(&r.text, n), r.usage),
        Err(e) => {
            log::warn!("record {}: final answer call failed: {e}", record.id);
            (Choice::Abstain, UsageRecord::default())
        }
    }
}

pub struct Engine<'a> {
    pub config: EngineConfig,
    pub provider: &'a dyn LanguageModel,
    pub scorer: &'a dyn ComplexityScorer,
    pub prompts: &'a PromptSet,
    pub params: &'a CompletionParams,
}

/// Outcome of executing one directive.
struct Executed {
    observation: String,
    usage: UsageRecord,
    assessment: Option<Assessment>,
    /// Pair to force-split on the next turn.
    force: Option<(UnitId, UnitId)>,
    provider_failure: Option<String>,
}

impl Executed {
    fn observe(observation: impl Into<String>) -> Self {
        Executed { observation: observation.into(), usage: UsageRecord::default(), assessment: None, force: None, provider_failure: None }
    }

    fn failed(err: &ActionError) -> Self {
        let mut e = Self::observe(format!("error: {err}"));
        if err.is_provider() {
            e.provider_failure = Some(err.to_string());
        }
        e
    }
}

struct RunState {
    store: UnitStore,
    demoted: BTreeSet<UnitId>,
}

impl<'a> Engine<'a> {
    pub fn new(
        config: EngineConfig,
        provider: &'a dyn LanguageModel,
        scorer: &'a dyn ComplexityScorer,
        prompts: &'a PromptSet,
        params: &'a CompletionParams,
    ) -> Self {
        Engine { config, provider, scorer, prompts, params }
    }

    fn ctx<'b>(&'b self, record: &'b DatasetRecord) -> ActionContext<'b> {
        ActionContext { provider: self.provider, params: self.params, prompts: self.prompts, question: &record.question }
    }

    fn pair_score(&self, left: &KnowledgeUnit, right: &KnowledgeUnit) -> Option<ComplexityScore> {
        match self.scorer.score(&format!("{} {}", left.text, right.text)) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("scoring ({}, {}) failed: {e}", left.unit_id, right.unit_id);
                None
            }
        }
    }

    fn is_complex(&self, score: Option<&ComplexityScore>) -> bool {
        score.is_some_and(|s| {
            should_decompose(s, &self.config.threshold).unwrap_or_else(|e| {
                log::warn!("{e}");
                false
            })
        })
    }

    /// A forced split is skipped for demoted branches and when the children
    /// would exceed the depth limit.
    fn may_force(&self, state: &RunState, left: &KnowledgeUnit, right: &KnowledgeUnit) -> bool {
        self.config.force_split_enabled
            && left.depth.max(right.depth) < self.config.max_depth
            && !(self.config.monotone_gating
                && (state.demoted.contains(&left.unit_id) || state.demoted.contains(&right.unit_id)))
    }

    fn lookup_pair(state: &RunState, args: &[String]) -> Result<(KnowledgeUnit, KnowledgeUnit), String> {
        let left = state.store.get(&args[0]).map_err(|e| format!("error: {e}"))?.clone();
        let right = state.store.get(&args[1]).map_err(|e| format!("error: {e}"))?.clone();
        Ok((left, right))
    }

    fn execute(&self, record: &DatasetRecord, state: &mut RunState, directive: &ActionDirective) -> Executed {
        let ctx = self.ctx(record);
        match directive.kind {
            ActionKind::Elicit => {
                let question = directive.arguments.first().map(String::as_str).unwrap_or(&record.question);
                let id = state.store.next_id(UnitIdKind::Parametric);
                match actions::elicit(&ctx, question, id) {
                    Ok(p) => {
                        let obs = format!("{}: {}", p.value.unit_id, p.value.text);
                        state.store.insert(p.value);
                        Executed { usage: p.usage, ..Executed::observe(obs) }
                    }
                    Err(e) => Executed::failed(&e),
                }
            }
            ActionKind::Reason => {
                let unit = match state.store.get(&directive.arguments[0]) {
                    Ok(u) => u.clone(),
                    Err(e) => return Executed::observe(format!("error: {e}")),
                };
                match actions::reason(&ctx, &unit) {
                    Ok(p) => {
                        let steps: Vec<String> =
                            p.value.steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect();
                        let mut obs = format!("Reasoning path over {}:\n{}", unit.unit_id, steps.join("\n"));
                        if unit.depth < self.config.max_depth {
                            if let Ok(child) = state.store.derive_child_unit(&unit, &p.value.steps.join("; ")) {
                                obs.push_str(&format!("\nStored as {}.", child.unit_id));
                            }
                        }
                        Executed { usage: p.usage, ..Executed::observe(obs) }
                    }
                    Err(e) => Executed::failed(&e),
                }
            }
            ActionKind::Assert => {
                let (left, right) = match Self::lookup_pair(state, &directive.arguments) {
                    Ok(p) => p,
                    Err(obs) => return Executed::observe(obs),
                };
                let verdict = match actions::assert_conflict(&ctx, &left, &right) {
                    Ok(v) => v,
                    Err(e) => return Executed::failed(&e),
                };
                let complexity = self.pair_score(&left, &right);
                let complex = self.is_complex(complexity.as_ref());
                let conflict = verdict.value.is_conflict();
                let label = if conflict { "CONFLICT" } else { "CONSISTENT" };
                let mut obs = format!("{label} between {} and {}", left.unit_id, right.unit_id);
                if !verdict.value.rationale.is_empty() {
                    obs.push_str(&format!(": {}", verdict.value.rationale));
                }
                let force = (conflict && complex && self.may_force(state, &left, &right))
                    .then(|| (left.unit_id.clone(), right.unit_id.clone()));
                Executed {
                    usage: verdict.usage,
                    assessment: Some(Assessment { delta: verdict.value.delta, complexity, complex }),
                    force,
                    ..Executed::observe(obs)
                }
            }
            ActionKind::Decompose => {
                let (left, right) = match Self::lookup_pair(state, &directive.arguments) {
                    Ok(p) => p,
                    Err(obs) => return Executed::observe(obs),
                };
                self.execute_decompose(&ctx, state, &left, &right)
            }
            ActionKind::Finish => {
                let arg = &directive.arguments[0];
                match finish_choice(directive, record.options.len()) {
                    Some(_) => Executed::observe(format!("Final answer: {arg}")),
                    None => Executed::observe(format!(
                        "error: `{arg}` is not a valid option; choose one of A-{}",
                        Choice::Option(record.options.len() as u8 - 1)
                    )),
                }
            }
        }
    }

    fn execute_decompose(
        &self,
        ctx: &ActionContext<'_>,
        state: &mut RunState,
        left: &KnowledgeUnit,
        right: &KnowledgeUnit,
    ) -> Executed {
        if self.config.monotone_gating && (state.demoted.contains(&left.unit_id) || state.demoted.contains(&right.unit_id)) {
            return Executed::observe(format!(
                "decomposition of ({} || {}) suppressed: an earlier split of this branch did not reduce complexity",
                left.unit_id, right.unit_id
            ));
        }
        let store = &mut state.store;
        let performed = match actions::decompose(ctx, left, right, self.config.max_depth, &mut || {
            store.next_id(UnitIdKind::Derived)
        }) {
            Ok(p) => p,
            Err(e) => return Executed::failed(&e),
        };
        let pairs = performed.value;
        let mut demoted_pairs = Vec::new();
        if self.config.monotone_gating {
            let parent = self.pair_score(left, right);
            for (i, (l, r)) in pairs.iter().enumerate() {
                let shrinks = match (parent.as_ref(), self.pair_score(l, r)) {
                    (Some(p), Some(c)) => verify_monotone(p, &[c]) == MonotoneVerdict::Ok,
                    _ => false,
                };
                if !shrinks {
                    demoted_pairs.push(i);
                }
            }
        }
        let mut lines = vec![format!("Split ({} || {}) into:", left.unit_id, right.unit_id)];
        for (i, (l, r)) in pairs.into_iter().enumerate() {
            lines.push(format!("({} || {}) A: {} | B: {}", l.unit_id, r.unit_id, l.text, r.text));
            if demoted_pairs.contains(&i) {
                state.demoted.insert(l.unit_id.clone());
                state.demoted.insert(r.unit_id.clone());
            }
            state.store.insert(l);
            state.store.insert(r);
        }
        if !demoted_pairs.is_empty() {
            lines.push(format!(
                "Pairs {:?} did not reduce complexity and will not be split further.",
                demoted_pairs.iter().map(|i| i + 1).collect::<Vec<_>>()
            ));
        }
        Executed { usage: performed.usage, ..Executed::observe(lines.join("\n")) }
    }

    pub fn run(&self, record: &DatasetRecord) -> Trajectory {
        let mut traj = Trajectory::new(&record.id, &self.config.method);
        if let Err(e) = self.config.validate() {
            traj.failure = Some(e.to_string());
            traj.final_answer = Some(Choice::Abstain);
            return traj;
        }
        let mut state = RunState { store: UnitStore::new(), demoted: BTreeSet::new() };
        let ctx = self.ctx(record);

        let elicited_id = state.store.next_id(UnitIdKind::Parametric);
        match actions::elicit(&ctx, &record.question, elicited_id) {
            Ok(p) => {
                traj.overhead_usage += p.usage;
                state.store.insert(p.value);
            }
            Err(e) => traj.failure = Some(format!("initial elicitation failed: {e}")),
        }
        for e in &record.evidence {
            state.store.add_root(&e.text, KnowledgeSource::Retrieved).expect("validated evidence is non-empty");
        }

        let mut pending_force: Option<(UnitId, UnitId)> = None;
        let mut note: Option<String> = None;
        for _ in 0..self.config.turn_budget {
            if traj.failure.is_some() {
                break;
            }
            let turn = traj.steps.len() as u32 + 1;
            let (thought, directive, mut usage) = if let Some((l, r)) = pending_force.take() {
                (
                    format!("Conflict detected on a context above the complexity threshold; splitting ({l} || {r})."),
                    ActionDirective::forced_decompose(&l, &r),
                    UsageRecord::default(),
                )
            } else {
                let mut history = render_history(&traj.steps);
                if let Some(n) = note.take() {
                    history.push_str(&format!("\n\nNote: {n}"));
                }
                let prompt = render(
                    &self.prompts.agent,
                    &[
                        ("question", &record.question),
                        ("options", &format_options(&record.options)),
                        ("units", &render_units(&state.store)),
                        ("history", &history),
                    ],
                );
                let reply = match self.provider.complete(&prompt, self.params) {
                    Ok(r) => r,
                    Err(e) => {
                        traj.failure = Some(format!("turn {turn}: {e}"));
                        break;
                    }
                };
                match parse_action_directive(&reply.text) {
                    Ok(d) => (parse_thought(&reply.text), d, reply.usage),
                    Err(e) => {
                        traj.rejected_replies += 1;
                        traj.overhead_usage += reply.usage;
                        note = Some(format!("your previous reply was rejected ({e}). Reply with one Thought and one Action line."));
                        continue;
                    }
                }
            };
            let executed = self.execute(record, &mut state, &directive);
            usage += executed.usage;
            traj.steps.push(TraceStep {
                turn,
                thought,
                action: directive,
                observation: executed.observation,
                usage,
                assessment: executed.assessment,
            });
            if let Some(f) = executed.provider_failure {
                traj.failure = Some(format!("turn {turn}: {f}"));
                break;
            }
            pending_force = executed.force;
            if is_solved(&traj, record.options.len()) {
                break;
            }
        }

        traj.units = state.store.into_units();
        traj.solved = is_solved(&traj, record.options.len());
        let (answer, usage) = finalize_answer(&traj, record, self.provider, self.prompts, self.params);
        traj.overhead_usage += usage;
        traj.final_answer = Some(answer);
        traj
    }
}

/// Runs one record with the builtin prompts and default decoding parameters.
pub fn run_trajectory(
    record: &DatasetRecord,
    config: &EngineConfig,
    provider: &dyn LanguageModel,
    scorer: &dyn ComplexityScorer,
) -> Trajectory {
    let prompts = PromptSet::builtin();
    let params = CompletionParams::default();
    Engine::new(config.clone(), provider, scorer, &prompts, &params).run(record)
}
