//! Future sub-goal prediction: a task-type classifier over the instruction,
//! per-type transition tables over parameterized sub-goals, and a tracker
//! that skips sub-goals whose interaction already happened.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::lexicon::Category;
use crate::math::argmax;
use crate::nn::{softmax_ce, train_step, Activation, Checkpoint, DenseNet, Matrix, NnError, Optimizer, TrainConfig};
use crate::rng::substream;
use crate::text::{tokenize, Vocab, Q, SEP};
use crate::world::{action_for_subgoal, Action, ActionKind, Episode, SubGoal, SubGoalVerb, TaskType, NUM_TASK_TYPES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    Param(u8),
    Fixed(Category),
}

/// A sub-goal whose nouns may refer to task parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AbstractSubGoal {
    pub verb: SubGoalVerb,
    pub noun1: Slot,
    pub noun2: Option<Slot>,
}

impl AbstractSubGoal {
    fn from_concrete(sg: &SubGoal, params: &[Category]) -> AbstractSubGoal {
        let slot = |c: Category| match params.iter().position(|&p| p == c) {
            Some(i) => Slot::Param(i as u8),
            None => Slot::Fixed(c),
        };
        AbstractSubGoal {
            verb: sg.verb,
            noun1: slot(sg.noun1),
            noun2: sg.noun2.map(slot),
        }
    }

    fn bind(&self, params: &[Category], prior: &[Category]) -> SubGoal {
        let get = |s: Slot| match s {
            Slot::Fixed(c) => c,
            Slot::Param(i) => params.get(i as usize).or(prior.get(i as usize)).copied().unwrap_or(Category::Potato),
        };
        SubGoal {
            verb: self.verb,
            noun1: get(self.noun1),
            noun2: self.noun2.map(get),
        }
    }
}

/// Counts of the next abstract sub-goal after `prev` has been seen
/// `occurrence` times; the last column is the end of the plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub prev: Option<u16>,
    pub occurrence: u8,
    pub counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeTable {
    pub abstracts: Vec<AbstractSubGoal>,
    pub rows: Vec<TransitionRow>,
    /// Most frequent category bound to each parameter slot.
    pub param_prior: Vec<Category>,
}

const MAX_OCCURRENCE: u8 = 3;

impl TypeTable {
    /// Add-one smoothed next-step distribution, `None` for unseen contexts.
    pub fn row_probs(&self, prev: Option<u16>, occurrence: u8) -> Option<Vec<f64>> {
        let row = self
            .rows
            .iter()
            .find(|r| r.prev == prev && r.occurrence == occurrence.min(MAX_OCCURRENCE))?;
        let total: u32 = row.counts.iter().sum();
        let n = row.counts.len() as f64;
        Some(
            row.counts
                .iter()
                .map(|&c| (c as f64 + 1.0) / (total as f64 + n))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerModel {
    pub vocab: Vocab,
    pub classifier: DenseNet,
    pub tables: Vec<TypeTable>,
    pub max_len: usize,
    pub rollout_cap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerConfig {
    pub hidden: usize,
    pub train: TrainConfig,
    pub max_len: usize,
    pub rollout_cap: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            hidden: 32,
            train: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 16,
                epochs: 30,
                ..TrainConfig::default()
            },
            max_len: 12,
            rollout_cap: 32,
        }
    }
}

/// Tokens of the first utterance.
pub fn instruction_tokens(dialog_tokens: &[u32]) -> &[u32] {
    let end = dialog_tokens
        .iter()
        .position(|&t| t == SEP || t == Q)
        .unwrap_or(dialog_tokens.len());
    &dialog_tokens[..end]
}

fn bag_of_words(tokens: &[u32], vocab_len: usize) -> Vec<f64> {
    let mut x = vec![0.0; vocab_len];
    let known: Vec<usize> = tokens
        .iter()
        .map(|&t| t as usize)
        .filter(|&t| t > crate::text::UNK as usize && t < vocab_len)
        .collect();
    for &t in &known {
        x[t] += 1.0 / known.len() as f64;
    }
    x
}

/// Categories mentioned in order, matching the longest surface form first.
pub fn mentioned_categories(vocab: &Vocab, tokens: &[u32]) -> Vec<Category> {
    let words: Vec<&str> = tokens.iter().map(|&t| vocab.token(t)).collect();
    let forms: Vec<(Vec<String>, Category)> = Category::ALL
        .iter()
        .flat_map(|&c| [c.plural(), c.phrase(), c.noun()].map(|f| (tokenize(f), c)))
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let best = forms
            .iter()
            .filter(|(f, _)| f.len() <= words.len() - i && f.iter().zip(&words[i..]).all(|(a, b)| a == b))
            .max_by_key(|(f, _)| f.len());
        match best {
            Some((f, c)) => {
                out.push(*c);
                i += f.len();
            }
            None => i += 1,
        }
    }
    out
}

fn verb_allowed(verb: SubGoalVerb, action_vocab: &[ActionKind]) -> bool {
    let needed = match verb {
        SubGoalVerb::Find => return true,
        SubGoalVerb::Pickup => ActionKind::Pickup,
        SubGoalVerb::Place => ActionKind::Place,
        SubGoalVerb::Slice => ActionKind::Slice,
        SubGoalVerb::Open => ActionKind::Open,
        SubGoalVerb::Close => ActionKind::Close,
        SubGoalVerb::ToggleOn => ActionKind::ToggleOn,
    };
    action_vocab.contains(&needed)
}

impl PlannerModel {
    /// The classifier and rollout limits. Transition tables are stored separately.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_dense("planner.classifier", &self.classifier);
        ck.push_tensor(
            "planner.meta",
            &Matrix {
                rows: 1,
                cols: 2,
                data: vec![self.max_len as f64, self.rollout_cap as f64],
            },
        );
        ck
    }

    pub fn from_parts(ck: &Checkpoint, vocab: Vocab, tables: Vec<TypeTable>) -> Result<PlannerModel, NnError> {
        let classifier = ck.dense("planner.classifier")?;
        let meta = ck.tensor("planner.meta")?;
        if meta.data.len() != 2
            || classifier.input_dim() != vocab.len()
            || classifier.output_dim() != NUM_TASK_TYPES
            || tables.len() != NUM_TASK_TYPES
        {
            return Err(NnError::BadCheckpoint("planner shapes are inconsistent"));
        }
        Ok(PlannerModel {
            vocab,
            classifier,
            tables,
            max_len: meta.data[0] as usize,
            rollout_cap: meta.data[1] as usize,
        })
    }

    pub fn task_type_probs(&self, dialog_tokens: &[u32]) -> Vec<f64> {
        let x = bag_of_words(instruction_tokens(dialog_tokens), self.vocab.len());
        if x.iter().all(|&v| v == 0.0) {
            return vec![1.0 / NUM_TASK_TYPES as f64; NUM_TASK_TYPES];
        }
        crate::math::softmax(&self.classifier.infer(&x).expect("classifier width"))
    }

    pub fn predict_task_type(&self, dialog_tokens: &[u32]) -> TaskType {
        TaskType::ALL[argmax(&self.task_type_probs(dialog_tokens))]
    }

    /// The complete predicted plan from the start of the task.
    pub fn full_plan(&self, dialog_tokens: &[u32]) -> Vec<SubGoal> {
        let ty = self.predict_task_type(dialog_tokens);
        let table = &self.tables[ty.index()];
        let mut params = mentioned_categories(&self.vocab, instruction_tokens(dialog_tokens));
        params.truncate(ty.arity());
        let mut plan = Vec::new();
        let mut prev: Option<u16> = None;
        let mut seen: BTreeMap<u16, u8> = BTreeMap::new();
        while plan.len() < self.rollout_cap {
            let occ = prev.map(|p| seen[&p]).unwrap_or(0);
            let Some(probs) = table.row_probs(prev, occ) else {
                break;
            };
            let next = argmax(&probs);
            if next == table.abstracts.len() {
                break;
            }
            plan.push(table.abstracts[next].bind(&params, &table.param_prior));
            let c = seen.entry(next as u16).or_insert(0);
            *c = c.saturating_add(1);
            prev = Some(next as u16);
        }
        plan
    }

    /// Remaining sub-goals after those matched by executed interaction actions.
    pub fn predict_subgoals(&self, dialog_tokens: &[u32], action_vocab: &[ActionKind], history: &[Action]) -> Vec<SubGoal> {
        let plan = self.full_plan(dialog_tokens);
        let mut done = 0;
        for a in history.iter().filter(|a| a.is_interaction()) {
            if let Some(j) = plan[done..]
                .iter()
                .position(|sg| action_for_subgoal(sg).as_ref() == Some(a))
            {
                done += j + 1;
            }
        }
        plan[done..]
            .iter()
            .filter(|sg| verb_allowed(sg.verb, action_vocab))
            .take(self.max_len)
            .copied()
            .collect()
    }
}

fn build_tables(episodes: &[Episode]) -> Vec<TypeTable> {
    TaskType::ALL
        .iter()
        .map(|&ty| {
            let eps: Vec<&Episode> = episodes.iter().filter(|e| e.task.task_type == ty).collect();
            let mut abstracts: Vec<AbstractSubGoal> = eps
                .iter()
                .flat_map(|e| e.task.gold_subgoals.iter().map(|sg| AbstractSubGoal::from_concrete(sg, &e.task.params)))
                .collect();
            abstracts.sort();
            abstracts.dedup();
            let n = abstracts.len();
            let mut rows: BTreeMap<(Option<u16>, u8), Vec<u32>> = BTreeMap::new();
            let mut param_counts: Vec<BTreeMap<Category, u32>> = vec![BTreeMap::new(); ty.arity()];
            for e in &eps {
                for (i, &p) in e.task.params.iter().enumerate() {
                    *param_counts[i].entry(p).or_insert(0) += 1;
                }
                let mut prev: Option<u16> = None;
                let mut seen: BTreeMap<u16, u8> = BTreeMap::new();
                let chain = e.task.gold_subgoals.iter().map(|sg| {
                    let a = AbstractSubGoal::from_concrete(sg, &e.task.params);
                    abstracts.binary_search(&a).expect("abstract present")
                });
                for next in chain.map(Some).chain([None]) {
                    let occ = prev.map(|p| seen[&p].min(MAX_OCCURRENCE)).unwrap_or(0);
                    let row = rows.entry((prev, occ)).or_insert_with(|| vec![0; n + 1]);
                    row[next.unwrap_or(n)] += 1;
                    if let Some(x) = next {
                        let c = seen.entry(x as u16).or_insert(0);
                        *c = c.saturating_add(1);
                        prev = Some(x as u16);
                    }
                }
            }
            let param_prior = param_counts
                .iter()
                .map(|m| {
                    m.iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map(|(c, _)| *c)
                        .unwrap_or(Category::Potato)
                })
                .collect();
            TypeTable {
                abstracts,
                rows: rows
                    .into_iter()
                    .map(|((prev, occurrence), counts)| TransitionRow { prev, occurrence, counts })
                    .collect(),
                param_prior,
            }
        })
        .collect()
}

pub fn train_planner(episodes: &[Episode], vocab: &Vocab, cfg: &PlannerConfig) -> Result<PlannerModel, NnError> {
    if episodes.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let v = vocab.len();
    let examples: Vec<(Vec<f64>, usize)> = episodes
        .iter()
        .map(|e| {
            let toks = vocab.encode_dialog(&e.dialog);
            (bag_of_words(instruction_tokens(&toks), v), e.task.task_type.index())
        })
        .collect();
    let mut classifier = DenseNet::new(
        &[v, cfg.hidden, NUM_TASK_TYPES],
        &[Activation::Tanh, Activation::Identity],
        cfg.train.seed,
        "planner.classifier",
    );
    let mut opt = Optimizer::new(&cfg.train, &classifier);
    for epoch in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut substream(cfg.train.seed, &alloc::format!("planner/epoch/{epoch}")));
        for chunk in order.chunks(cfg.train.batch_size.max(1)) {
            let batch: Vec<&(Vec<f64>, usize)> = chunk.iter().map(|&i| &examples[i]).collect();
            train_step(&mut classifier, &mut opt, &batch, |net, ex, g| {
                let (y, cache) = net.forward(&ex.0).expect("bag width");
                let (_, loss, gl) = softmax_ce(&y, ex.1).expect("label");
                net.backward_into(&cache, &gl, g);
                loss
            })?;
        }
    }
    Ok(PlannerModel {
        vocab: vocab.clone(),
        classifier,
        tables: build_tables(episodes),
        max_len: cfg.max_len,
        rollout_cap: cfg.rollout_cap,
    })
}

/// Longest-common-subsequence F1.
pub fn rouge_l<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    if reference.is_empty() && hypothesis.is_empty() {
        return 1.0;
    }
    if reference.is_empty() || hypothesis.is_empty() {
        return 0.0;
    }
    let m = hypothesis.len();
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for r in reference {
        for j in 0..m {
            cur[j + 1] = if *r == hypothesis[j] {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[m] as f64;
    let recall = lcs / reference.len() as f64;
    let precision = lcs / hypothesis.len() as f64;
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Words of the rendered sub-goals, in order.
pub fn subgoal_words(z: &[SubGoal]) -> Vec<String> {
    z.iter().flat_map(|sg| tokenize(&alloc::format!("{sg}"))).collect()
}

/// Mean word-level Rouge-L of predictions made halfway through each expert trajectory.
pub fn mid_episode_rouge(model: &PlannerModel, episodes: &[Episode]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let scores: Vec<f64> = episodes
        .iter()
        .map(|e| {
            let t = e.expert_actions.len() / 2;
            let toks = model.vocab.encode_dialog(&e.dialog);
            let hyp = model.predict_subgoals(&toks, &ActionKind::ALL, &e.expert_actions[..t]);
            rouge_l(&subgoal_words(&e.remaining_subgoals(t)), &subgoal_words(&hyp))
        })
        .collect();
    crate::math::order_invariant_sum(&scores) / scores.len() as f64
}
