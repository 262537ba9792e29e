//! Candidate question-answer pairs: oracle templates filled from ground
//! truth and answer-first generated questions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::fnv1a64;
use crate::world::{oracle_lookup, AnswerFacts, GridWorld, Intent, SubGoal, Turn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaType {
    Location,
    Appearance,
    Direction,
    CurrentSubgoal,
    NextSubgoal,
    Generated,
}

impl QaType {
    pub const ALL: [QaType; 6] = [
        QaType::Location,
        QaType::Appearance,
        QaType::Direction,
        QaType::CurrentSubgoal,
        QaType::NextSubgoal,
        QaType::Generated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QaType::Location => "location",
            QaType::Appearance => "appearance",
            QaType::Direction => "direction",
            QaType::CurrentSubgoal => "current_subgoal",
            QaType::NextSubgoal => "next_subgoal",
            QaType::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Option<QaType> {
        QaType::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    OracleFact,
    PlannerSubgoal,
    ExtractedNoun,
    ExtractedPhrase,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub qa_type: QaType,
    pub source: AnswerSource,
}

impl QaPair {
    pub fn is_well_formed(&self) -> bool {
        self.question.ends_with('?') && !self.answer.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerCandidate {
    pub text: String,
    /// Index of the sub-goal the candidate came from.
    pub origin: usize,
    pub is_noun: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaMode {
    Oracle,
    Generated,
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QaGenConfig {
    /// Maximum number of candidates, K.
    pub candidate_cap: usize,
    /// Probability that a generated pair gets another candidate's question.
    pub malform_rate: f64,
}

impl Default for QaGenConfig {
    fn default() -> Self {
        QaGenConfig {
            candidate_cap: 16,
            malform_rate: 0.0,
        }
    }
}

fn oracle(question: String, answer: String, qa_type: QaType, source: AnswerSource) -> QaPair {
    QaPair {
        question,
        answer,
        qa_type,
        source,
    }
}

/// Template pairs for the current sub-goal `z[0]` and the next one `z[1]`.
pub fn oracle_qas(world: &GridWorld, z: &[SubGoal]) -> Vec<QaPair> {
    let mut out = Vec::new();
    let Some(current) = z.first() else {
        return out;
    };
    let nouns: Vec<_> = current.nouns().collect();
    for &c in &nouns {
        if let Ok(AnswerFacts::Location { direction, container }) = oracle_lookup(world, Intent::LocationOf(c)) {
            let place = container.map(|k| k.noun()).unwrap_or("floor");
            out.push(oracle(
                format!("Where is {}?", c.name()),
                format!("The {} is to your {} in/on the {}.", c.name(), direction.word(), place),
                QaType::Location,
                AnswerSource::OracleFact,
            ));
        }
    }
    for &c in &nouns {
        if let Ok(AnswerFacts::Appearance { color, material }) = oracle_lookup(world, Intent::AppearanceOf(c)) {
            out.push(oracle(
                format!("What does {} look like?", c.name()),
                format!("The {} is {} and made of {}.", c.name(), color.word(), material.word()),
                QaType::Appearance,
                AnswerSource::OracleFact,
            ));
        }
    }
    for &c in &nouns {
        if let Ok(AnswerFacts::Direction { turn }) = oracle_lookup(world, Intent::DirectionTo(c)) {
            let answer = match turn {
                Turn::Left => String::from("You should turn left."),
                Turn::Right => String::from("You should turn right."),
                Turn::None => String::from("You don't need to move."),
            };
            out.push(oracle(
                String::from("Which direction should I turn to?"),
                answer,
                QaType::Direction,
                AnswerSource::OracleFact,
            ));
        }
    }
    out.push(oracle(
        String::from("What is current sub-goal?"),
        format!("{current}."),
        QaType::CurrentSubgoal,
        AnswerSource::PlannerSubgoal,
    ));
    if let Some(next) = z.get(1) {
        out.push(oracle(
            String::from("What is next sub-goal?"),
            format!("{next}."),
            QaType::NextSubgoal,
            AnswerSource::PlannerSubgoal,
        ));
    }
    out
}

/// Nouns and full phrases of each sub-goal, first occurrence kept.
pub fn extract_answers(z: &[SubGoal]) -> Vec<AnswerCandidate> {
    let mut out: Vec<AnswerCandidate> = Vec::new();
    let mut push = |text: String, origin: usize, is_noun: bool| {
        if !out.iter().any(|c| c.text == text) {
            out.push(AnswerCandidate { text, origin, is_noun });
        }
    };
    for (i, sg) in z.iter().enumerate() {
        for c in sg.nouns() {
            push(String::from(c.noun()), i, true);
        }
        push(format!("{sg}"), i, false);
    }
    out
}

/// Answer-aware question: the answer's shape picks the intent and a hash of
/// `(dialog, answer)` picks between two phrasings.
pub fn generate_question(dialog_tokens: &[u32], answer: &AnswerCandidate) -> String {
    let mut bytes = Vec::with_capacity(dialog_tokens.len() * 4 + answer.text.len() + 1);
    for t in dialog_tokens {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    bytes.push(0xff);
    bytes.extend_from_slice(answer.text.as_bytes());
    let alt = fnv1a64(&bytes) & 1 == 1;
    match (answer.is_noun, alt) {
        (true, false) => format!("Where is {}?", answer.text),
        (true, true) => format!("What should I do with {}?", answer.text),
        (false, false) => String::from("What is my next step?"),
        (false, true) => String::from("What should I do now?"),
    }
}

pub fn generated_qas<R: Rng>(z: &[SubGoal], dialog_tokens: &[u32], malform_rate: f64, rng: &mut R) -> Vec<QaPair> {
    let answers = extract_answers(z);
    let questions: Vec<String> = answers.iter().map(|a| generate_question(dialog_tokens, a)).collect();
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut q = i;
            if malform_rate > 0.0 && answers.len() > 1 && rng.random::<f64>() < malform_rate {
                q = (i + 1 + rng.random_range(0..answers.len() - 1)) % answers.len();
            }
            QaPair {
                question: questions[q].clone(),
                answer: a.text.clone(),
                qa_type: QaType::Generated,
                source: if a.is_noun {
                    AnswerSource::ExtractedNoun
                } else {
                    AnswerSource::ExtractedPhrase
                },
            }
        })
        .collect()
}

/// The candidate set Q_t: oracle pairs first in combined mode, duplicates
/// by `(question, answer)` removed, truncated to the cap.
pub fn build_candidates<R: Rng>(
    world: &GridWorld,
    z: &[SubGoal],
    dialog_tokens: &[u32],
    mode: QaMode,
    cfg: &QaGenConfig,
    rng: &mut R,
) -> Vec<QaPair> {
    let mut all = Vec::new();
    if matches!(mode, QaMode::Oracle | QaMode::Combined) {
        all.extend(oracle_qas(world, z));
    }
    if matches!(mode, QaMode::Generated | QaMode::Combined) {
        all.extend(generated_qas(z, dialog_tokens, cfg.malform_rate, rng));
    }
    let mut out: Vec<QaPair> = Vec::new();
    for p in all {
        if out.len() == cfg.candidate_cap {
            break;
        }
        if !out.iter().any(|o| o.question == p.question && o.answer == p.answer) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::Category;
    use crate::rng::substream;
    use crate::world::toy_world;
    use crate::world::{Facing, SubGoalVerb};
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn sg(s: &str) -> SubGoal {
        s.parse().unwrap()
    }

    #[test]
    fn potato_on_desk_extraction() {
        let got: BTreeSet<String> = extract_answers(&[sg("pickup potato"), sg("place potato on desk")])
            .into_iter()
            .map(|c| c.text)
            .collect();
        let want: BTreeSet<String> = ["potato", "pickup potato", "desk", "place potato on desk"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(got, want);
        assert!(extract_answers(&[]).is_empty());
        assert_eq!(extract_answers(&[sg("find mug"), sg("find mug")]).len(), 2);
    }

    #[test]
    fn location_template_for_floor_object() {
        let mut w = toy_world();
        w.agent.x = 2;
        w.agent.y = 2;
        w.agent.facing = Facing::W;
        let qas = oracle_qas(&w, &[sg("find cabinet")]);
        assert_eq!(qas[0].question, "Where is Cabinet?");
        // Cabinet at (3,3) is behind and to the left when facing west.
        assert_eq!(qas[0].answer, "The Cabinet is to your behind in/on the floor.");
        let types: Vec<QaType> = qas.iter().map(|q| q.qa_type).collect();
        assert_eq!(
            types,
            [QaType::Location, QaType::Appearance, QaType::Direction, QaType::CurrentSubgoal]
        );
        assert_eq!(qas[3].answer, "find cabinet.");
    }

    #[test]
    fn facing_target_direction_answer() {
        let mut w = toy_world();
        w.agent.x = 2;
        w.agent.y = 2;
        w.agent.facing = Facing::N;
        let qas = oracle_qas(&w, &[SubGoal::new(SubGoalVerb::Find, Category::Countertop), sg("pickup potato")]);
        let dir = qas.iter().find(|q| q.qa_type == QaType::Direction).unwrap();
        assert_eq!(dir.answer, "You don't need to move.");
        assert_eq!(qas.last().unwrap().answer, "pickup potato.");
    }

    #[test]
    fn generated_questions_follow_answer_shape() {
        let noun = AnswerCandidate {
            text: String::from("potato"),
            origin: 0,
            is_noun: true,
        };
        let q = generate_question(&[5, 6], &noun);
        assert!(q == "Where is potato?" || q == "What should I do with potato?");
        assert_eq!(q, generate_question(&[5, 6], &noun));
        let phrase = AnswerCandidate {
            text: String::from("place potato on desk"),
            origin: 0,
            is_noun: false,
        };
        let q = generate_question(&[], &phrase);
        assert!(q == "What is my next step?" || q == "What should I do now?");
    }

    #[test]
    fn candidate_modes_and_cap() {
        let w = toy_world();
        let z = [sg("find potato"), sg("pickup potato")];
        let mut rng = substream(1, "t");
        let oracle = build_candidates(&w, &z, &[], QaMode::Oracle, &QaGenConfig::default(), &mut rng);
        let generated = build_candidates(&w, &z, &[], QaMode::Generated, &QaGenConfig::default(), &mut rng);
        let combined = build_candidates(&w, &z, &[], QaMode::Combined, &QaGenConfig::default(), &mut rng);
        assert_eq!(oracle.len(), 5);
        assert_eq!(generated.len(), 3);
        assert_eq!(combined.len(), 8);
        assert!(oracle.iter().all(|q| q.qa_type != QaType::Generated));
        assert_eq!(&combined[..5], &oracle[..]);
        let cfg = QaGenConfig {
            candidate_cap: 2,
            ..QaGenConfig::default()
        };
        let two = build_candidates(&w, &z, &[], QaMode::Combined, &cfg, &mut rng);
        assert_eq!(two, oracle[..2].to_vec());
    }

    #[test]
    fn malformed_pairs_mismatch_questions() {
        let z = [sg("pickup potato"), sg("place potato on desk")];
        let mut rng = substream(2, "m");
        let bad = generated_qas(&z, &[], 1.0, &mut rng);
        let good = generated_qas(&z, &[], 0.0, &mut rng);
        assert_eq!(bad.len(), good.len());
        assert!(bad.iter().zip(&good).any(|(b, g)| b.question != g.question));
        assert!(bad.iter().zip(&good).all(|(b, g)| b.answer == g.answer));
    }

    fn arb_subgoal() -> impl Strategy<Value = SubGoal> {
        (0usize..SubGoalVerb::ALL.len(), 0usize..15, 0usize..7).prop_map(|(v, a, b)| {
            let verb = SubGoalVerb::ALL[v];
            let item = Category::from_index(a).unwrap();
            if verb == SubGoalVerb::Place {
                SubGoal::place(item, Category::from_index(b).unwrap())
            } else {
                SubGoal::new(verb, item)
            }
        })
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent(z in proptest::collection::vec(arb_subgoal(), 0..6)) {
            let first = extract_answers(&z);
            let phrases: Vec<SubGoal> = first.iter().filter(|c| !c.is_noun).map(|c| c.text.parse().unwrap()).collect();
            let again: BTreeSet<String> = extract_answers(&phrases).into_iter().map(|c| c.text).collect();
            let first: BTreeSet<String> = first.into_iter().map(|c| c.text).collect();
            prop_assert!(again.is_subset(&first));
        }

        #[test]
        fn candidates_are_capped_unique_and_grounded(
            z in proptest::collection::vec(arb_subgoal(), 0..5),
            cap in 1usize..20,
            seed in any::<u64>(),
        ) {
            let w = toy_world();
            let cfg = QaGenConfig { candidate_cap: cap, malform_rate: 0.3 };
            let mut rng = substream(seed, "p");
            let qs = build_candidates(&w, &z, &[1, 2], QaMode::Combined, &cfg, &mut rng);
            prop_assert!(qs.len() <= cap);
            let answers: BTreeSet<String> = extract_answers(&z).into_iter().map(|c| c.text).collect();
            for (i, q) in qs.iter().enumerate() {
                prop_assert!(q.is_well_formed());
                prop_assert!(!qs[..i].iter().any(|o| o.question == q.question && o.answer == q.answer));
                if q.qa_type == QaType::Generated {
                    prop_assert!(answers.contains(&q.answer));
                }
            }
            let _ = vec![0];
        }
    }
}
