//! Comparison prompting methods. Each run produces a [`Trajectory`] with one
//! step per provider call so the eval module treats baselines and engine
//! runs alike.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ActionDirective, ActionKind, Choice, DatasetRecord, TraceStep, Trajectory};
use crate::eval::extract_choice;
use crate::prompts::{format_evidence, format_options, render, PromptSet};
use crate::provider::{CompletionParams, LanguageModel};

pub const DEFAULT_SELF_ASK_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    EndToEnd,
    FewShot,
    Cot,
    SelfAsk,
    Comparative,
    Gkp,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 6] = [
        BaselineMethod::EndToEnd,
        BaselineMethod::FewShot,
        BaselineMethod::Cot,
        BaselineMethod::SelfAsk,
        BaselineMethod::Comparative,
        BaselineMethod::Gkp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::EndToEnd => "end_to_end",
            BaselineMethod::FewShot => "few_shot",
            BaselineMethod::Cot => "cot",
            BaselineMethod::SelfAsk => "self_ask",
            BaselineMethod::Comparative => "comparative",
            BaselineMethod::Gkp => "gkp",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown baseline method `{s}`"))
    }
}

/// Which call of a multi-phase method a prompt is for, with the text carried
/// over from the previous call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    Generation,
    Answering { knowledge: String },
    ClosedBook,
    Reconcile { closed_book_answer: String },
    SelfAskRound { transcript: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("method {0} requires a phase")]
    MissingPhase(BaselineMethod),
    #[error("phase {phase:?} does not apply to method {method}")]
    WrongPhase { method: BaselineMethod, phase: Phase },
}

/// Fills the method's template for `record`. Pure.
pub fn build_prompt(
    prompts: &PromptSet,
    method: BaselineMethod,
    record: &DatasetRecord,
    phase: Option<&Phase>,
) -> Result<String, BaselineError> {
    let options = format_options(&record.options);
    let evidence = format_evidence(record);
    let base = [("question", record.question.as_str()), ("options", options.as_str()), ("evidence", evidence.as_str())];
    let fill = |template: &str, extra: &[(&str, &str)]| {
        let mut values = base.to_vec();
        values.extend_from_slice(extra);
        render(template, &values)
    };
    let wrong = |phase: &Phase| BaselineError::WrongPhase { method, phase: phase.clone() };
    Ok(match (method, phase) {
        (BaselineMethod::EndToEnd, None) => fill(&prompts.end_to_end, &[]),
        (BaselineMethod::FewShot, None) => fill(&prompts.few_shot, &[("exemplars", prompts.few_shot_exemplars.trim_end())]),
        (BaselineMethod::Cot, None) => fill(&prompts.cot, &[]),
        (BaselineMethod::SelfAsk, None) => fill(&prompts.self_ask, &[("transcript", "")]),
        (BaselineMethod::SelfAsk, Some(Phase::SelfAskRound { transcript })) => {
            fill(&prompts.self_ask, &[("transcript", transcript)])
        }
        (BaselineMethod::Gkp, Some(Phase::Generation)) => fill(&prompts.gkp_generation, &[]),
        (BaselineMethod::Gkp, Some(Phase::Answering { knowledge })) => {
            fill(&prompts.gkp_answering, &[("knowledge", knowledge)])
        }
        (BaselineMethod::Comparative, Some(Phase::ClosedBook)) => fill(&prompts.comparative_closed_book, &[]),
        (BaselineMethod::Comparative, Some(Phase::Reconcile { closed_book_answer })) => {
            fill(&prompts.comparative_reconcile, &[("closed_book_answer", closed_book_answer)])
        }
        (BaselineMethod::Gkp | BaselineMethod::Comparative, None) => return Err(BaselineError::MissingPhase(method)),
        (_, Some(p)) => return Err(wrong(p)),
    })
}

static SELF_ASK_FINAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:so the final answer is)\s*:?\s*\(?([A-Z])\b").unwrap());

/// The label after "So the final answer is", if the reply finalizes.
pub fn self_ask_final(reply: &str, n_options: usize) -> Option<Choice> {
    let caps = SELF_ASK_FINAL.captures_iter(reply).last()?;
    let letter = caps.get(1)?.as_str();
    Choice::from_letter(letter).filter(|c| c.index().is_some_and(|i| i < n_options))
}

pub struct BaselineRunner<'a> {
    pub provider: &'a dyn LanguageModel,
    pub prompts: &'a PromptSet,
    pub params: &'a CompletionParams,
    pub self_ask_cap: usize,
}

struct Run<'r, 'a> {
    runner: &'r BaselineRunner<'a>,
    record: &'r DatasetRecord,
    traj: Trajectory,
}

impl Run<'_, '_> {
    /// One provider call recorded as a step. `None` marks the trajectory failed.
    fn call(&mut self, prompt: &str, action: ActionDirective) -> Option<String> {
        match self.runner.provider.complete(prompt, self.runner.params) {
            Ok(r) => {
                self.traj.steps.push(TraceStep {
                    turn: self.traj.steps.len() as u32 + 1,
                    thought: String::new(),
                    action,
                    observation: r.text.clone(),
                    usage: r.usage,
                    assessment: None,
                });
                Some(r.text)
            }
            Err(e) => {
                log::warn!("record {}: {} call failed: {e}", self.record.id, self.traj.method);
                self.traj.failure = Some(e.to_string());
                self.traj.final_answer = Some(Choice::Abstain);
                None
            }
        }
    }

    fn finish(mut self, choice: Choice) -> Trajectory {
        if let Some(last) = self.traj.steps.last_mut() {
            last.action = ActionDirective::finish(&choice.label());
        }
        self.traj.final_answer = Some(choice);
        self.traj.solved = true;
        self.traj
    }

    fn fail(self) -> Trajectory {
        self.traj
    }

    fn prompt(&self, method: BaselineMethod, phase: Option<&Phase>) -> String {
        build_prompt(self.runner.prompts, method, self.record, phase).expect("phase chosen by the runner")
    }
}

fn step(kind: ActionKind, arg: &str) -> ActionDirective {
    ActionDirective::new(kind, vec![arg.to_string()])
}

impl BaselineRunner<'_> {
    pub fn run(&self, method: BaselineMethod, record: &DatasetRecord) -> Trajectory {
        let n = record.options.len();
        let mut run = Run { runner: self, record, traj: Trajectory::new(&record.id, method.as_str()) };
        match method {
            BaselineMethod::EndToEnd | BaselineMethod::FewShot | BaselineMethod::Cot => {
                let prompt = run.prompt(method, None);
                match run.call(&prompt, step(ActionKind::Finish, "")) {
                    Some(reply) => run.finish(extract_choice(&reply, n)),
                    None => run.fail(),
                }
            }
            BaselineMethod::Gkp => {
                let prompt = run.prompt(method, Some(&Phase::Generation));
                let Some(knowledge) = run.call(&prompt, step(ActionKind::Elicit, "knowledge")) else {
                    return run.fail();
                };
                let prompt = run.prompt(method, Some(&Phase::Answering { knowledge: knowledge.trim().to_string() }));
                match run.call(&prompt, step(ActionKind::Finish, "")) {
                    Some(reply) => run.finish(extract_choice(&reply, n)),
                    None => run.fail(),
                }
            }
            BaselineMethod::Comparative => {
                let prompt = run.prompt(method, Some(&Phase::ClosedBook));
                let Some(closed) = run.call(&prompt, step(ActionKind::Elicit, "closed_book")) else {
                    return run.fail();
                };
                let prompt =
                    run.prompt(method, Some(&Phase::Reconcile { closed_book_answer: closed.trim().to_string() }));
                match run.call(&prompt, step(ActionKind::Finish, "")) {
                    Some(reply) => run.finish(extract_choice(&reply, n)),
                    None => run.fail(),
                }
            }
            BaselineMethod::SelfAsk => {
                let mut transcript = String::new();
                for round in 1..=self.self_ask_cap {
                    let prompt = run.prompt(method, Some(&Phase::SelfAskRound { transcript: transcript.clone() }));
                    let Some(reply) = run.call(&prompt, step(ActionKind::Reason, &format!("round{round}"))) else {
                        return run.fail();
                    };
                    if let Some(choice) = self_ask_final(&reply, n) {
                        return run.finish(choice);
                    }
                    if !transcript.is_empty() {
                        transcript.push('\n');
                    }
                    transcript.push_str(reply.trim());
                }
                run.traj.final_answer = Some(Choice::Abstain);
                run.traj
            }
        }
    }
}

/// Runs `method` with builtin prompts.
pub fn run_baseline(
    method: BaselineMethod,
    record: &DatasetRecord,
    provider: &dyn LanguageModel,
    params: &CompletionParams,
    self_ask_cap: usize,
) -> Trajectory {
    let prompts = PromptSet::builtin();
    BaselineRunner { provider, prompts: &prompts, params, self_ask_cap }.run(method, record)
}
