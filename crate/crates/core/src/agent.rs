//! The asking episode loop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::actioner::{action_id, Actioner, StateInfo, START_ACTION};
use crate::confusion::{is_confused, measure, ConfusionConfig, ConfusionError, ConfusionMeasure, ConfusionMode};
use crate::math::{argmax, fnv1a64, sqrtf};
use crate::nn::NnError;
use crate::planner::PlannerModel;
use crate::qaeval::QaEvaluator;
use crate::qagen::{build_candidates, QaGenConfig, QaMode, QaPair};
use crate::rng::substream;
use crate::text::Vocab;
use crate::world::{check_goal_conditions, observe, step, Action, ActionKind, Episode, GridWorld, StepOutcome};

/// Which candidate source the agent asks from; `None` never asks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaArm {
    None,
    Oracle,
    Generated,
    Combined,
}

impl QaArm {
    pub const ALL: [QaArm; 4] = [QaArm::None, QaArm::Oracle, QaArm::Generated, QaArm::Combined];

    pub fn name(self) -> &'static str {
        match self {
            QaArm::None => "none",
            QaArm::Oracle => "oracle",
            QaArm::Generated => "generated",
            QaArm::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<QaArm> {
        QaArm::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn mode(self) -> Option<QaMode> {
        match self {
            QaArm::None => None,
            QaArm::Oracle => Some(QaMode::Oracle),
            QaArm::Generated => Some(QaMode::Generated),
            QaArm::Combined => Some(QaMode::Combined),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub confusion: ConfusionConfig,
    pub qa_mode: QaArm,
    /// Top-k size.
    pub k: usize,
    /// Candidate cap K.
    pub candidate_cap: usize,
    pub horizon: usize,
    pub seed: u64,
    pub malform_rate: f64,
    pub tau_sample: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            confusion: ConfusionConfig::default(),
            qa_mode: QaArm::Oracle,
            k: 5,
            candidate_cap: 16,
            horizon: 200,
            seed: 0,
            malform_rate: 0.0,
            tau_sample: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn is_valid(&self) -> bool {
        self.confusion.is_valid()
            && self.k >= 1
            && self.candidate_cap >= 1
            && self.horizon >= 1
            && (0.0..=1.0).contains(&self.malform_rate)
            && self.tau_sample > 0.0
    }
}

/// Everything the loop reads. Shared read-only between episodes.
#[derive(Clone, Debug)]
pub struct Models {
    pub actioner: Actioner,
    pub planner: PlannerModel,
    pub qaeval: QaEvaluator,
    pub vocab: Vocab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaAttempt {
    pub pair: QaPair,
    pub committed: bool,
    /// Confusion of the augmented state.
    pub after: ConfusionMeasure,
    pub n_candidates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub state_digest: u64,
    pub measure: ConfusionMeasure,
    pub confused: bool,
    pub attempts: Vec<QaAttempt>,
    pub action: Action,
    pub outcome: StepOutcome,
}

impl StepRecord {
    pub fn committed(&self) -> impl Iterator<Item = &QaAttempt> {
        self.attempts.iter().filter(|a| a.committed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub episode_seed: u64,
    pub qa_mode: QaArm,
    pub confusion_mode: ConfusionMode,
    pub steps: Vec<StepRecord>,
    pub final_world: GridWorld,
    pub goal_flags: Vec<bool>,
    pub success: bool,
    pub gc_fraction: f64,
    pub questions_asked: usize,
    pub expert_len: usize,
}

impl Trajectory {
    pub fn attempts(&self) -> usize {
        self.steps.iter().map(|s| s.attempts.len()).sum()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("invalid agent configuration")]
    InvalidConfig,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Confusion(#[from] ConfusionError),
}

/// Appends `<q> q <a> a` to the dialog; histories are untouched.
pub fn augment_state(s: &StateInfo, vocab: &Vocab, pair: &QaPair) -> StateInfo {
    let mut out = s.clone();
    out.add_qa(vocab, &pair.question, &pair.answer);
    out
}

pub fn state_digest(s: &StateInfo) -> u64 {
    let mut bytes = Vec::new();
    for t in &s.dialog_tokens {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    bytes.push(0xff);
    for (a, o) in s.action_history.iter().zip(&s.obs_history) {
        bytes.extend_from_slice(&a.to_le_bytes());
        for f in &o.features {
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        bytes.push(0xfe);
    }
    fnv1a64(&bytes)
}

fn goals_met(world: &GridWorld, ep: &Episode) -> Vec<bool> {
    check_goal_conditions(world, &ep.task)
}

fn finish(
    ep: &Episode,
    cfg: &AgentConfig,
    steps: Vec<StepRecord>,
    world: GridWorld,
) -> Trajectory {
    let goal_flags = goals_met(&world, ep);
    let met = goal_flags.iter().filter(|&&b| b).count();
    let questions_asked = steps.iter().map(|s| s.committed().count()).sum();
    Trajectory {
        episode_seed: ep.seed,
        qa_mode: cfg.qa_mode,
        confusion_mode: cfg.confusion.mode,
        steps,
        success: goal_flags.iter().all(|&b| b),
        gc_fraction: met as f64 / goal_flags.len().max(1) as f64,
        goal_flags,
        final_world: world,
        questions_asked,
        expert_len: ep.expert_actions.len(),
    }
}

/// Runs one episode: predict, measure, maybe ask, act by argmax.
///
/// Committed question-answer blocks stay in the dialog for later steps.
pub fn run_episode(models: &Models, ep: &Episode, cfg: &AgentConfig) -> Result<Trajectory, AgentError> {
    if !cfg.is_valid() {
        return Err(AgentError::InvalidConfig);
    }
    let actioner = &models.actioner;
    let cc = &cfg.confusion;
    let qcfg = QaGenConfig {
        candidate_cap: cfg.candidate_cap,
        malform_rate: cfg.malform_rate,
    };
    let mut rng = substream(cfg.seed, &format!("agent/{}", ep.seed));
    let mut world = ep.world0.clone();
    let mut state = StateInfo::new(models.vocab.encode_dialog(&ep.dialog));
    let mut prev = START_ACTION;
    let mut done_actions: Vec<Action> = Vec::new();
    let mut steps = Vec::new();
    for t in 0..cfg.horizon {
        state.push(prev, observe(&world));
        state.truncate_to(actioner.window);
        let digest = state_digest(&state);
        let (mut out, before) = measure(actioner, &state, cc);
        let confused = match cfg.qa_mode.mode() {
            Some(_) => is_confused(&before, cc, t)?,
            None => false,
        };
        let mut attempts = Vec::new();
        if let (true, Some(mode)) = (confused, cfg.qa_mode.mode()) {
            let z = models.planner.predict_subgoals(&state.dialog_tokens, &ActionKind::ALL, &done_actions);
            let mut current = before;
            for _ in 0..cc.max_questions_per_step {
                let cands = build_candidates(&world, &z, &state.dialog_tokens, mode, &qcfg, &mut rng);
                let Some((ranked, chosen)) =
                    models.qaeval.rank_and_sample(&models.vocab, &out.h, &cands, cfg.k, cfg.tau_sample, &mut rng)?
                else {
                    break;
                };
                let pair = ranked[chosen].pair.clone();
                let aug = augment_state(&state, &models.vocab, &pair);
                let (aug_out, after) = measure(actioner, &aug, cc);
                let committed = crate::confusion::should_commit(&current, &after, cc)?;
                attempts.push(QaAttempt {
                    pair,
                    committed,
                    after,
                    n_candidates: cands.len(),
                });
                if committed {
                    state = aug;
                    out = aug_out;
                    current = after;
                }
            }
        }
        let action = out.action();
        let (next, outcome) = step(&world, &action);
        world = next;
        prev = action_id(action.kind());
        if outcome == StepOutcome::Ok {
            done_actions.push(action);
        }
        steps.push(StepRecord {
            t,
            state_digest: digest,
            measure: before,
            confused,
            attempts,
            action,
            outcome,
        });
        if action.kind() == ActionKind::Stop || goals_met(&world, ep).iter().all(|&b| b) {
            break;
        }
    }
    Ok(finish(ep, cfg, steps, world))
}

/// The plain policy rollout with no confusion machinery at all.
pub fn bare_rollout(actioner: &Actioner, vocab: &Vocab, ep: &Episode, horizon: usize) -> Vec<Action> {
    let mut world = ep.world0.clone();
    let mut state = StateInfo::new(vocab.encode_dialog(&ep.dialog));
    let mut prev = START_ACTION;
    let mut out = Vec::new();
    for _ in 0..horizon {
        state.push(prev, observe(&world));
        state.truncate_to(actioner.window);
        let action = actioner.predict(&state).action();
        world = step(&world, &action).0;
        prev = action_id(action.kind());
        out.push(action);
        if action.kind() == ActionKind::Stop || goals_met(&world, ep).iter().all(|&b| b) {
            break;
        }
    }
    out
}

/// The strict-decrease rule evaluated on logged measures alone.
pub fn decrease_rule(before: &ConfusionMeasure, after: &ConfusionMeasure, mode: ConfusionMode) -> bool {
    match mode {
        ConfusionMode::Gradient => after.grad_norm < before.grad_norm,
        _ => {
            after.action_entropy < before.action_entropy
                || (before.is_interaction && after.object_entropy < before.object_entropy)
        }
    }
}

/// Replays a logged trajectory and checks it against the loop's rules:
/// committed questions satisfy the decrease rule, each executed action is the
/// argmax of the distribution in force (augmented after a commit), and the
/// reconstructed states, measures and world outcomes match the log exactly.
pub fn check_conformance(models: &Models, ep: &Episode, cfg: &AgentConfig, traj: &Trajectory) -> Result<(), String> {
    let actioner = &models.actioner;
    let cc = &cfg.confusion;
    let check_rule = cc.mode != ConfusionMode::Fixed || cc.fixed_uses_commit_check;
    let mut world = ep.world0.clone();
    let mut state = StateInfo::new(models.vocab.encode_dialog(&ep.dialog));
    let mut prev = START_ACTION;
    if traj.steps.len() > cfg.horizon {
        return Err(format!("{} steps exceed horizon {}", traj.steps.len(), cfg.horizon));
    }
    for rec in &traj.steps {
        let t = rec.t;
        state.push(prev, observe(&world));
        state.truncate_to(actioner.window);
        if state_digest(&state) != rec.state_digest {
            return Err(format!("step {t}: state digest mismatch"));
        }
        let (mut out, before) = measure(actioner, &state, cc);
        if before != rec.measure {
            return Err(format!("step {t}: logged measure differs from recomputation"));
        }
        if cfg.qa_mode == QaArm::None && !rec.attempts.is_empty() {
            return Err(format!("step {t}: question attempted with qa_mode none"));
        }
        if !rec.attempts.is_empty() && !rec.confused {
            return Err(format!("step {t}: question attempted while not confused"));
        }
        let mut current = before;
        for (i, att) in rec.attempts.iter().enumerate() {
            let aug = augment_state(&state, &models.vocab, &att.pair);
            let (aug_out, after) = measure(actioner, &aug, cc);
            if after != att.after {
                return Err(format!("step {t} attempt {i}: logged augmented measure differs"));
            }
            let rule = decrease_rule(&current, &att.after, cc.mode);
            if check_rule && att.committed != rule {
                return Err(format!("step {t} attempt {i}: committed={} but decrease rule={rule}", att.committed));
            }
            if att.committed {
                state = aug;
                out = aug_out;
                current = after;
            }
        }
        let expected_kind = argmax(&out.p_action);
        if rec.action.kind().index() != expected_kind || rec.action != out.action() {
            return Err(format!("step {t}: executed {} is not the argmax of the distribution in force", rec.action));
        }
        let (next, outcome) = step(&world, &rec.action);
        if outcome != rec.outcome {
            return Err(format!("step {t}: outcome mismatch"));
        }
        world = next;
        prev = action_id(rec.action.kind());
    }
    if world != traj.final_world {
        return Err(String::from("final world mismatch"));
    }
    let asked: usize = traj.steps.iter().map(|s| s.committed().count()).sum();
    if asked != traj.questions_asked {
        return Err(String::from("questions_asked does not count committed attempts"));
    }
    Ok(())
}

/// Mean and population standard deviation of per-task question counts.
pub fn count_stats(counts: &[usize]) -> Option<(f64, f64)> {
    if counts.is_empty() {
        return None;
    }
    let n = counts.len() as f64;
    let sum: usize = counts.iter().sum();
    let sq: usize = counts.iter().map(|c| c * c).sum();
    let mean = sum as f64 / n;
    // n * sum(c^2) - (sum c)^2 is exact in integers
    let num = (counts.len() * sq) as f64 - (sum as f64) * (sum as f64);
    Some((mean, sqrtf(num.max(0.0)) / n))
}

pub fn question_stats(trajs: &[Trajectory]) -> Option<(f64, f64)> {
    let counts: Vec<usize> = trajs.iter().map(|t| t.questions_asked).collect();
    count_stats(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actioner::ActionerConfig;
    use crate::planner::{train_planner, PlannerConfig};
    use crate::qaeval::QaEvalConfig;
    use crate::qagen::{AnswerSource, QaType};
    use crate::world::{generate_dataset, DatasetConfig};
    use proptest::prelude::*;

    fn episodes() -> Vec<Episode> {
        generate_dataset(&DatasetConfig {
            n_layouts: 4,
            episodes_per_layout: 2,
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    fn models(eps: &[Episode], seed: u64) -> Models {
        let vocab = Vocab::standard();
        let actioner = Actioner::new(&ActionerConfig { seed, ..ActionerConfig::default() }, vocab.len());
        let planner = train_planner(eps, &vocab, &PlannerConfig::default()).unwrap();
        let qaeval = QaEvaluator::new(&QaEvalConfig::default(), vocab.len(), actioner.d());
        Models {
            actioner,
            planner,
            qaeval,
            vocab,
        }
    }

    /// Biases the action head so that the policy always turns left.
    fn spinning(mut m: Models) -> Models {
        let last = m.actioner.action_head.layers.last_mut().unwrap();
        last.bias[ActionKind::TurnLeft.index()] = 50.0;
        m
    }

    fn pair(q: &str, a: &str) -> QaPair {
        QaPair {
            question: String::from(q),
            answer: String::from(a),
            qa_type: QaType::Location,
            source: AnswerSource::OracleFact,
        }
    }

    #[test]
    fn augment_appends_and_strips() {
        let v = Vocab::standard();
        let s = StateInfo::new(v.encode("please make coffee ."));
        let a = augment_state(&s, &v, &pair("Where is Mug?", "The Mug is to your left in/on the floor."));
        assert_eq!(&a.dialog_tokens[..s.dialog_tokens.len()], &s.dialog_tokens[..]);
        assert_eq!(a.obs_history, s.obs_history);
        assert_eq!(a.fresh_start, Some(s.dialog_tokens.len()));
        let mut stripped = a.clone();
        stripped.dialog_tokens.truncate(s.dialog_tokens.len());
        stripped.fresh_start = None;
        assert_eq!(stripped, s);
        let p2 = pair("What is current sub-goal?", "find mug.");
        let b = augment_state(&a, &v, &p2);
        let mut want = a.dialog_tokens.clone();
        want.extend(v.encode_qa(&p2.question, &p2.answer));
        assert_eq!(b.dialog_tokens, want);
    }

    #[test]
    fn none_arm_matches_bare_policy() {
        let eps = episodes();
        let m = models(&eps, 3);
        for (i, ep) in eps.iter().enumerate() {
            let cfg = AgentConfig {
                qa_mode: QaArm::None,
                seed: i as u64,
                horizon: 60,
                ..AgentConfig::default()
            };
            let traj = run_episode(&m, ep, &cfg).unwrap();
            assert_eq!(traj.questions_asked, 0);
            assert_eq!(traj.actions(), bare_rollout(&m.actioner, &m.vocab, ep, 60));
            check_conformance(&m, ep, &cfg, &traj).unwrap();
        }
    }

    #[test]
    fn huge_thresholds_never_ask() {
        let eps = episodes();
        let m = models(&eps, 4);
        let mut cfg = AgentConfig {
            horizon: 40,
            ..AgentConfig::default()
        };
        cfg.confusion.entropy_action_threshold = 1e9;
        cfg.confusion.entropy_object_threshold = 1e9;
        let traj = run_episode(&m, &eps[0], &cfg).unwrap();
        assert_eq!(traj.attempts(), 0);
    }

    #[test]
    fn fixed_period_three_over_thirty_steps() {
        let eps = episodes();
        let m = spinning(models(&eps, 5));
        let mut cfg = AgentConfig {
            horizon: 30,
            qa_mode: QaArm::Oracle,
            ..AgentConfig::default()
        };
        cfg.confusion.mode = ConfusionMode::Fixed;
        cfg.confusion.fixed_period = 3;
        let traj = run_episode(&m, &eps[0], &cfg).unwrap();
        assert_eq!(traj.steps.len(), 30);
        assert_eq!(traj.attempts(), 10);
        assert_eq!(traj.questions_asked, 10);
        check_conformance(&m, &eps[0], &cfg, &traj).unwrap();
    }

    #[test]
    fn asking_arms_conform_and_are_deterministic() {
        let eps = episodes();
        let m = models(&eps, 6);
        for mode in [ConfusionMode::Entropy, ConfusionMode::Gradient] {
            for arm in [QaArm::Oracle, QaArm::Generated, QaArm::Combined] {
                let mut cfg = AgentConfig {
                    qa_mode: arm,
                    horizon: 50,
                    ..AgentConfig::default()
                };
                cfg.confusion.mode = mode;
                cfg.confusion.grad_norm_threshold = 0.0;
                cfg.confusion.entropy_action_threshold = 0.0;
                for ep in &eps[..3] {
                    let a = run_episode(&m, ep, &cfg).unwrap();
                    assert!(a.attempts() > 0);
                    check_conformance(&m, ep, &cfg, &a).unwrap();
                    assert_eq!(a, run_episode(&m, ep, &cfg).unwrap());
                }
            }
        }
    }

    #[test]
    fn conformance_catches_tampering() {
        let eps = episodes();
        let m = models(&eps, 7);
        let mut cfg = AgentConfig {
            horizon: 30,
            ..AgentConfig::default()
        };
        cfg.confusion.entropy_action_threshold = 0.0;
        let traj = run_episode(&m, &eps[1], &cfg).unwrap();
        let k = traj.steps.iter().position(|s| !s.attempts.is_empty()).unwrap();
        let mut flipped = traj.clone();
        let att = &mut flipped.steps[k].attempts[0];
        att.committed = !att.committed;
        assert!(check_conformance(&m, &eps[1], &cfg, &flipped).is_err());
        let mut wrong = traj.clone();
        let a = wrong.steps[0].action;
        wrong.steps[0].action = if a.kind() == ActionKind::Forward {
            Action::nav(ActionKind::TurnRight)
        } else {
            Action::nav(ActionKind::Forward)
        };
        assert!(check_conformance(&m, &eps[1], &cfg, &wrong).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let eps = episodes();
        let m = models(&eps, 8);
        let cfg = AgentConfig {
            k: 0,
            ..AgentConfig::default()
        };
        assert_eq!(run_episode(&m, &eps[0], &cfg), Err(AgentError::InvalidConfig));
    }

    #[test]
    fn stats_examples() {
        assert_eq!(count_stats(&[2, 2, 2]), Some((2.0, 0.0)));
        assert_eq!(count_stats(&[0, 4]), Some((2.0, 2.0)));
        let (m, s) = count_stats(&[1, 2, 3, 4]).unwrap();
        assert!((m - 2.5).abs() < 1e-12);
        let direct = {
            let d: f64 = [1.0f64, 2.0, 3.0, 4.0].iter().map(|x| (x - 2.5) * (x - 2.5)).sum();
            libm::sqrt(d / 4.0)
        };
        assert!((s - direct).abs() < 1e-9);
        assert!((s - 1.118_033_988_749_895).abs() < 1e-9);
        assert_eq!(count_stats(&[]), None);
    }

    proptest! {
        #[test]
        fn stats_match_two_pass_formula(counts in proptest::collection::vec(0usize..300, 1..40)) {
            let (m, s) = count_stats(&counts).unwrap();
            let n = counts.len() as f64;
            let mean: f64 = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
            let var: f64 = counts.iter().map(|&c| (c as f64 - mean) * (c as f64 - mean)).sum::<f64>() / n;
            prop_assert!((m - mean).abs() < 1e-9);
            prop_assert!((s - libm::sqrt(var)).abs() < 1e-6);
        }
    }
}
