//! Line-delimited trajectory logs: one record per step, one summary per episode.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use elba_core::agent::{QaAttempt, StepRecord};
use elba_core::qagen::AnswerSource;
use elba_core::world::{step, StepOutcome};
use elba_core::{Action, ConfusionMeasure, ConfusionMode, Episode, QaArm, QaPair, QaType, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaLine {
    pub q: String,
    pub a: String,
    #[serde(rename = "type")]
    pub qa_type: QaType,
    pub step: usize,
    pub committed: bool,
    pub source: AnswerSource,
    pub after: ConfusionMeasure,
    pub n_candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub episode_seed: u64,
    pub t: usize,
    pub state_digest: u64,
    pub measure: ConfusionMeasure,
    pub confused: bool,
    pub qas: Vec<QaLine>,
    pub action: Action,
    pub outcome: StepOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub episode_seed: u64,
    pub success: bool,
    pub gc_fraction: f64,
    pub steps: usize,
    pub questions_asked: usize,
    pub qa_mode: QaArm,
    pub confusion_mode: ConfusionMode,
    pub expert_len: usize,
    pub goal_flags: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepLine),
    Summary(SummaryLine),
}

pub fn records(traj: &Trajectory) -> Vec<LogRecord> {
    let mut out: Vec<LogRecord> = traj
        .steps
        .iter()
        .map(|s| {
            LogRecord::Step(StepLine {
                episode_seed: traj.episode_seed,
                t: s.t,
                state_digest: s.state_digest,
                measure: s.measure,
                confused: s.confused,
                qas: s
                    .attempts
                    .iter()
                    .map(|a| QaLine {
                        q: a.pair.question.clone(),
                        a: a.pair.answer.clone(),
                        qa_type: a.pair.qa_type,
                        step: s.t,
                        committed: a.committed,
                        source: a.pair.source,
                        after: a.after,
                        n_candidates: a.n_candidates,
                    })
                    .collect(),
                action: s.action,
                outcome: s.outcome,
            })
        })
        .collect();
    out.push(LogRecord::Summary(SummaryLine {
        episode_seed: traj.episode_seed,
        success: traj.success,
        gc_fraction: traj.gc_fraction,
        steps: traj.steps.len(),
        questions_asked: traj.questions_asked,
        qa_mode: traj.qa_mode,
        confusion_mode: traj.confusion_mode,
        expert_len: traj.expert_len,
        goal_flags: traj.goal_flags.clone(),
    }));
    out
}

pub fn encode(trajs: &[Trajectory]) -> Result<String> {
    let mut s = String::new();
    for t in trajs {
        for r in records(t) {
            s.push_str(&serde_json::to_string(&r)?);
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn parse(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("trajectory log line {}", i + 1)))
        .collect()
}

pub fn summaries(text: &str) -> Result<Vec<SummaryLine>> {
    Ok(parse(text)?
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Summary(s) => Some(s),
            LogRecord::Step(_) => None,
        })
        .collect())
}

/// Rebuilds trajectories, replaying the logged actions from each episode's start world.
pub fn decode(text: &str, episodes: &[Episode]) -> Result<Vec<Trajectory>> {
    let by_seed: BTreeMap<u64, &Episode> = episodes.iter().map(|e| (e.seed, e)).collect();
    let mut out = Vec::new();
    let mut pending: Vec<StepRecord> = Vec::new();
    let mut current: Option<u64> = None;
    for r in parse(text)? {
        match r {
            LogRecord::Step(s) => {
                if current.is_some_and(|c| c != s.episode_seed) {
                    bail!("step record of episode {} interleaved with episode {:?}", s.episode_seed, current);
                }
                current = Some(s.episode_seed);
                if s.t != pending.len() {
                    bail!("episode {} step {} out of order", s.episode_seed, s.t);
                }
                pending.push(StepRecord {
                    t: s.t,
                    state_digest: s.state_digest,
                    measure: s.measure,
                    confused: s.confused,
                    attempts: s
                        .qas
                        .into_iter()
                        .map(|q| QaAttempt {
                            pair: QaPair {
                                question: q.q,
                                answer: q.a,
                                qa_type: q.qa_type,
                                source: q.source,
                            },
                            committed: q.committed,
                            after: q.after,
                            n_candidates: q.n_candidates,
                        })
                        .collect(),
                    action: s.action,
                    outcome: s.outcome,
                });
            }
            LogRecord::Summary(sum) => {
                if current.is_some_and(|c| c != sum.episode_seed) {
                    bail!("summary of episode {} follows steps of {:?}", sum.episode_seed, current);
                }
                if sum.steps != pending.len() {
                    bail!("episode {} summary counts {} steps, log has {}", sum.episode_seed, sum.steps, pending.len());
                }
                let ep = by_seed
                    .get(&sum.episode_seed)
                    .ok_or_else(|| anyhow!("no episode with seed {}", sum.episode_seed))?;
                let mut world = ep.world0.clone();
                for s in &pending {
                    world = step(&world, &s.action).0;
                }
                out.push(Trajectory {
                    episode_seed: sum.episode_seed,
                    qa_mode: sum.qa_mode,
                    confusion_mode: sum.confusion_mode,
                    steps: std::mem::take(&mut pending),
                    final_world: world,
                    goal_flags: sum.goal_flags,
                    success: sum.success,
                    gc_fraction: sum.gc_fraction,
                    questions_asked: sum.questions_asked,
                    expert_len: sum.expert_len,
                });
                current = None;
            }
        }
    }
    if !pending.is_empty() {
        bail!("trajectory log ends without a summary record");
    }
    Ok(out)
}
