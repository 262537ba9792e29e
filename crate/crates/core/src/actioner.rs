//! The policy: a pooled multimodal encoder producing the hidden state `h`,
//! and two softmax heads over action kinds and object categories.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::lexicon::{Category, NUM_CATEGORIES};
use crate::math::{argmax, softmax};
use crate::nn::{
    softmax_ce, Activation, Cache, Checkpoint, DenseNet, Matrix, NnError, Optimizer, Parameterized, TrainConfig,
};
use crate::qagen::{build_candidates, QaGenConfig, QaMode};
use crate::rng::substream;
use crate::text::{Vocab, PAD};
use crate::world::{observe, Action, ActionKind, Episode, ObsPatch, NUM_ACTION_KINDS, OBS_FEATURES};

/// Object vocabulary: the categories followed by `<none>`.
pub const NUM_OBJECTS: usize = NUM_CATEGORIES + 1;
pub const NONE_OBJECT: usize = NUM_CATEGORIES;
/// Action history ids: 0 marks the episode start, then `1 + kind index`.
pub const START_ACTION: u32 = 0;
pub const NUM_ACTION_IDS: usize = NUM_ACTION_KINDS + 1;
const SLOTS: usize = 6;

pub fn action_id(kind: ActionKind) -> u32 {
    1 + kind.index() as u32
}

/// Dialog tokens, observations and previous actions. `obs_history[i]` is
/// what the agent saw before acting at step `i`; `action_history[i]` is the
/// action that led there, so both always have equal length.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct StateInfo {
    pub dialog_tokens: Vec<u32>,
    pub obs_history: Vec<ObsPatch>,
    pub action_history: Vec<u32>,
    /// Start of the question-answer tokens added at the current step.
    pub fresh_start: Option<usize>,
}

impl StateInfo {
    pub fn new(dialog_tokens: Vec<u32>) -> StateInfo {
        StateInfo {
            dialog_tokens,
            obs_history: Vec::new(),
            action_history: Vec::new(),
            fresh_start: None,
        }
    }

    /// Moves to the next step. Earlier question-answer blocks stay in the dialog.
    pub fn push(&mut self, prev_action: u32, obs: ObsPatch) {
        self.action_history.push(prev_action);
        self.obs_history.push(obs);
        self.fresh_start = None;
    }

    /// Appends `<q> question <a> answer` as part of the current step.
    pub fn add_qa(&mut self, vocab: &Vocab, question: &str, answer: &str) {
        self.fresh_start.get_or_insert(self.dialog_tokens.len());
        self.dialog_tokens.extend(vocab.encode_qa(question, answer));
    }

    /// Drops history older than `window` steps.
    pub fn truncate_to(&mut self, window: usize) {
        let n = self.obs_history.len();
        if n > window {
            self.obs_history.drain(..n - window);
            self.action_history.drain(..n - window);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub p_action: Vec<f64>,
    pub p_object: Vec<f64>,
    pub h: HiddenState,
}

impl PolicyOutput {
    pub fn action_kind(&self) -> ActionKind {
        ActionKind::from_index(argmax(&self.p_action)).expect("action head width")
    }

    /// Argmax object including `<none>`: the pseudo-label.
    pub fn object_label(&self) -> usize {
        argmax(&self.p_object)
    }

    /// The action executed for these distributions. Interaction actions take
    /// the most likely real category.
    pub fn action(&self) -> Action {
        let kind = self.action_kind();
        if kind.is_interaction() {
            let cat = Category::from_index(argmax(&self.p_object[..NUM_CATEGORIES])).expect("category");
            Action::interact(kind, cat)
        } else {
            Action::nav(kind)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionerConfig {
    pub embed: usize,
    pub d: usize,
    pub window: usize,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for ActionerConfig {
    fn default() -> Self {
        ActionerConfig {
            embed: 32,
            d: 64,
            window: 16,
            head_hidden: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actioner {
    pub window: usize,
    pub tok_emb: Matrix,
    pub obs_emb: Matrix,
    pub act_emb: Matrix,
    pub encoder: DenseNet,
    pub action_head: DenseNet,
    pub object_head: DenseNet,
}

/// Which rows of an embedding table feed a pooled slot, with weights.
struct Pool {
    rows: Vec<(usize, f64)>,
}

impl Pool {
    fn mean(ids: impl Iterator<Item = usize>) -> Pool {
        let rows: Vec<usize> = ids.collect();
        let w = if rows.is_empty() { 0.0 } else { 1.0 / rows.len() as f64 };
        Pool {
            rows: rows.into_iter().map(|r| (r, w)).collect(),
        }
    }

    fn apply(&self, table: &Matrix, out: &mut [f64]) {
        for &(r, w) in &self.rows {
            for (o, x) in out.iter_mut().zip(table.row(r)) {
                *o += w * x;
            }
        }
    }

    fn scatter(&self, grad: &[f64], table_grad: &mut [f64], cols: usize) {
        for &(r, w) in &self.rows {
            for (g, x) in table_grad[r * cols..(r + 1) * cols].iter_mut().zip(grad) {
                *g += w * x;
            }
        }
    }
}

struct Pools {
    dialog: Pool,
    segment: Pool,
    obs_window: Pool,
    obs_last: Pool,
    act_window: Pool,
    act_last: Pool,
}

/// Forward intermediates for backpropagation through the whole policy.
pub struct Trace {
    pools: Pools,
    enc: Cache,
    action: Cache,
    object: Cache,
}

fn obs_rows(obs: &[ObsPatch]) -> Pool {
    let mut rows = Vec::new();
    for o in obs {
        let w = 1.0 / (obs.len() * o.features.len().max(1)) as f64;
        rows.extend(o.features.iter().map(|&f| (f as usize, w)));
    }
    Pool { rows }
}

impl Actioner {
    pub fn new(cfg: &ActionerConfig, vocab_len: usize) -> Actioner {
        let e = cfg.embed;
        Actioner {
            window: cfg.window,
            tok_emb: Matrix::glorot(vocab_len, e, cfg.seed, "actioner.tok_emb"),
            obs_emb: Matrix::glorot(OBS_FEATURES, e, cfg.seed, "actioner.obs_emb"),
            act_emb: Matrix::glorot(NUM_ACTION_IDS, e, cfg.seed, "actioner.act_emb"),
            encoder: DenseNet::new(
                &[SLOTS * e, cfg.d, cfg.d],
                &[Activation::Tanh, Activation::Tanh],
                cfg.seed,
                "actioner.encoder",
            ),
            action_head: DenseNet::new(
                &[cfg.d, cfg.head_hidden, NUM_ACTION_KINDS],
                &[Activation::Tanh, Activation::Identity],
                cfg.seed,
                "actioner.action_head",
            ),
            object_head: DenseNet::new(
                &[cfg.d, cfg.head_hidden, NUM_OBJECTS],
                &[Activation::Tanh, Activation::Identity],
                cfg.seed,
                "actioner.object_head",
            ),
        }
    }

    pub fn d(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.tok_emb.cols
    }

    pub fn vocab_len(&self) -> usize {
        self.tok_emb.rows
    }

    fn pools(&self, s: &StateInfo) -> Pools {
        let vocab = self.tok_emb.rows;
        let tok = |t: u32| if (t as usize) < vocab { t as usize } else { crate::text::UNK as usize };
        let dialog: Vec<usize> = s.dialog_tokens.iter().filter(|&&t| t != PAD).map(|&t| tok(t)).collect();
        let cut = s.fresh_start.unwrap_or(s.dialog_tokens.len()).min(s.dialog_tokens.len());
        let segment: Vec<usize> = s.dialog_tokens[cut..]
            .iter()
            .filter(|&&t| t != PAD)
            .map(|&t| tok(t))
            .collect();
        let n = s.obs_history.len().min(s.action_history.len());
        let lo = n.saturating_sub(self.window);
        let obs = &s.obs_history[s.obs_history.len() - n..][lo..];
        let acts = &s.action_history[s.action_history.len() - n..][lo..];
        let act_row = |a: u32| (a as usize).min(NUM_ACTION_IDS - 1);
        Pools {
            dialog: Pool::mean(dialog.into_iter()),
            segment: Pool::mean(segment.into_iter()),
            obs_window: obs_rows(obs),
            obs_last: obs_rows(obs.last().map(core::slice::from_ref).unwrap_or(&[])),
            act_window: Pool::mean(acts.iter().map(|&a| act_row(a))),
            act_last: Pool::mean(acts.last().map(|&a| act_row(a)).into_iter()),
        }
    }

    fn encoder_input(&self, p: &Pools) -> Vec<f64> {
        let e = self.embed_dim();
        let mut x = vec![0.0; SLOTS * e];
        p.dialog.apply(&self.tok_emb, &mut x[0..e]);
        p.segment.apply(&self.tok_emb, &mut x[e..2 * e]);
        p.obs_window.apply(&self.obs_emb, &mut x[2 * e..3 * e]);
        p.obs_last.apply(&self.obs_emb, &mut x[3 * e..4 * e]);
        p.act_window.apply(&self.act_emb, &mut x[4 * e..5 * e]);
        p.act_last.apply(&self.act_emb, &mut x[5 * e..6 * e]);
        x
    }

    pub fn encode(&self, s: &StateInfo) -> HiddenState {
        let x = self.encoder_input(&self.pools(s));
        HiddenState {
            h: self.encoder.infer(&x).expect("encoder input width"),
        }
    }

    pub fn decode(&self, h: &HiddenState) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let a = self.action_head.infer(&h.h)?;
        let o = self.object_head.infer(&h.h)?;
        Ok((softmax(&a), softmax(&o)))
    }

    pub fn predict(&self, s: &StateInfo) -> PolicyOutput {
        let h = self.encode(s);
        let (p_action, p_object) = self.decode(&h).expect("hidden width matches heads");
        PolicyOutput { p_action, p_object, h }
    }

    /// Gradient of `CE(action_head(h), a) + [include_object] CE(object_head(h), o)` with respect to `h`.
    pub fn grad_wrt_hidden(
        &self,
        h: &HiddenState,
        pseudo_action: usize,
        pseudo_object: usize,
        include_object: bool,
    ) -> Result<Vec<f64>, NnError> {
        let (logits, cache) = self.action_head.forward(&h.h)?;
        let (_, _, g) = softmax_ce(&logits, pseudo_action)?;
        let mut out = self.action_head.input_grad(&cache, &g);
        if include_object {
            let (logits, cache) = self.object_head.forward(&h.h)?;
            let (_, _, g) = softmax_ce(&logits, pseudo_object)?;
            for (o, x) in out.iter_mut().zip(self.object_head.input_grad(&cache, &g)) {
                *o += x;
            }
        }
        Ok(out)
    }

    fn trace(&self, s: &StateInfo) -> (Vec<f64>, Vec<f64>, Trace) {
        let pools = self.pools(s);
        let x = self.encoder_input(&pools);
        let (h, enc) = self.encoder.forward(&x).expect("encoder input width");
        let (a, action) = self.action_head.forward(&h).expect("head width");
        let (o, object) = self.object_head.forward(&h).expect("head width");
        (a, o, Trace { pools, enc, action, object })
    }

    /// Behavior-cloning loss for one step; accumulates gradients in tensor order.
    pub fn bc_loss_grad(&self, s: &StateInfo, action: usize, object: Option<usize>, grads: &mut [Vec<f64>]) -> f64 {
        let (a, o, tr) = self.trace(s);
        let (_, mut loss, ga) = softmax_ce(&a, action).expect("action label");
        let mut gh = self.action_head.backward_into(&tr.action, &ga, &mut grads[7..11]);
        if let Some(label) = object {
            let (_, lo, go) = softmax_ce(&o, label).expect("object label");
            loss += lo;
            let g2 = self.object_head.backward_into(&tr.object, &go, &mut grads[11..15]);
            for (x, y) in gh.iter_mut().zip(g2) {
                *x += y;
            }
        }
        let gx = self.encoder.backward_into(&tr.enc, &gh, &mut grads[3..7]);
        let e = self.embed_dim();
        let (tok, rest) = grads.split_at_mut(1);
        let (obs, rest) = rest.split_at_mut(1);
        let act = &mut rest[0];
        tr.pools.dialog.scatter(&gx[0..e], &mut tok[0], e);
        tr.pools.segment.scatter(&gx[e..2 * e], &mut tok[0], e);
        tr.pools.obs_window.scatter(&gx[2 * e..3 * e], &mut obs[0], e);
        tr.pools.obs_last.scatter(&gx[3 * e..4 * e], &mut obs[0], e);
        tr.pools.act_window.scatter(&gx[4 * e..5 * e], act, e);
        tr.pools.act_last.scatter(&gx[5 * e..6 * e], act, e);
        loss
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_tensor(
            "actioner.meta",
            &Matrix {
                rows: 1,
                cols: 1,
                data: vec![self.window as f64],
            },
        );
        ck.push_tensor("actioner.tok_emb", &self.tok_emb);
        ck.push_tensor("actioner.obs_emb", &self.obs_emb);
        ck.push_tensor("actioner.act_emb", &self.act_emb);
        ck.push_dense("actioner.encoder", &self.encoder);
        ck.push_dense("actioner.action_head", &self.action_head);
        ck.push_dense("actioner.object_head", &self.object_head);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Actioner, NnError> {
        let meta = ck.tensor("actioner.meta")?;
        let a = Actioner {
            window: *meta.data.first().ok_or(NnError::BadCheckpoint("empty meta"))? as usize,
            tok_emb: ck.tensor("actioner.tok_emb")?,
            obs_emb: ck.tensor("actioner.obs_emb")?,
            act_emb: ck.tensor("actioner.act_emb")?,
            encoder: ck.dense("actioner.encoder")?,
            action_head: ck.dense("actioner.action_head")?,
            object_head: ck.dense("actioner.object_head")?,
        };
        let e = a.embed_dim();
        let ok = a.obs_emb.cols == e
            && a.act_emb.cols == e
            && a.obs_emb.rows == OBS_FEATURES
            && a.act_emb.rows == NUM_ACTION_IDS
            && a.encoder.input_dim() == SLOTS * e
            && a.action_head.input_dim() == a.d()
            && a.object_head.input_dim() == a.d()
            && a.action_head.output_dim() == NUM_ACTION_KINDS
            && a.object_head.output_dim() == NUM_OBJECTS;
        if !ok {
            return Err(NnError::BadCheckpoint("actioner shapes are inconsistent"));
        }
        Ok(a)
    }
}

impl Parameterized for Actioner {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.tok_emb.data, &self.obs_emb.data, &self.act_emb.data];
        v.extend(self.encoder.tensors());
        v.extend(self.action_head.tensors());
        v.extend(self.object_head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.tok_emb.data, &mut self.obs_emb.data, &mut self.act_emb.data];
        v.extend(self.encoder.tensors_mut());
        v.extend(self.action_head.tensors_mut());
        v.extend(self.object_head.tensors_mut());
        v
    }
}

/// One supervised step: a window-truncated state and the expert labels.
#[derive(Clone, Debug)]
pub struct BcExample {
    pub state: StateInfo,
    pub action: usize,
    pub object: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcConfig {
    pub model: ActionerConfig,
    pub train: TrainConfig,
    /// Fraction of episodes that receive inserted question-answer blocks.
    pub qa_episode_rate: f64,
    /// Per-step insertion probability within such episodes.
    pub qa_step_rate: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            model: ActionerConfig::default(),
            train: TrainConfig {
                learning_rate: 2e-3,
                batch_size: 32,
                epochs: 4,
                ..TrainConfig::default()
            },
            qa_episode_rate: 1.0,
            qa_step_rate: 0.4,
        }
    }
}

/// Per-step states along the expert trajectory. Selected episodes get
/// question-answer blocks built from the true remaining sub-goals; once
/// inserted, a block stays in the dialog.
pub fn bc_examples(episodes: &[Episode], vocab: &Vocab, cfg: &BcConfig) -> Vec<BcExample> {
    let mut out = Vec::new();
    for (ei, ep) in episodes.iter().enumerate() {
        let mut rng = substream(cfg.train.seed, &format!("bc/qa/{ei}"));
        let augment = rng.random::<f64>() < cfg.qa_episode_rate;
        let worlds = ep.replay_worlds();
        let mut state = StateInfo::new(vocab.encode_dialog(&ep.dialog));
        let mut prev = START_ACTION;
        for (t, a) in ep.expert_actions.iter().enumerate() {
            state.push(prev, observe(&worlds[t]));
            state.truncate_to(cfg.model.window);
            if augment && rng.random::<f64>() < cfg.qa_step_rate {
                let z = ep.remaining_subgoals(t);
                let cands = build_candidates(&worlds[t], &z, &state.dialog_tokens, QaMode::Combined, &QaGenConfig::default(), &mut rng);
                if let Some(qa) = cands.choose(&mut rng) {
                    state.add_qa(vocab, &qa.question, &qa.answer);
                }
            }
            out.push(BcExample {
                state: state.clone(),
                action: a.kind().index(),
                object: a.object().map(|c| c.index()),
            });
            prev = action_id(a.kind());
        }
    }
    out
}

/// Resumable training progress.
#[derive(Clone, Debug, PartialEq)]
pub struct BcProgress {
    pub optimizer: Optimizer,
    pub epochs_done: usize,
}

impl BcProgress {
    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.push_optimizer("actioner.optim", &self.optimizer);
        ck.push_tensor(
            "actioner.progress",
            &Matrix {
                rows: 1,
                cols: 1,
                data: vec![self.epochs_done as f64],
            },
        );
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<BcProgress, NnError> {
        let p = ck.tensor("actioner.progress")?;
        Ok(BcProgress {
            optimizer: ck.optimizer("actioner.optim")?,
            epochs_done: p.data.first().copied().ok_or(NnError::BadCheckpoint("progress"))? as usize,
        })
    }
}

/// Minibatch behavior cloning for `cfg.train.epochs` total epochs, continuing from `resume` if given.
pub fn train_bc(
    examples: &[BcExample],
    vocab_len: usize,
    cfg: &BcConfig,
    resume: Option<(Actioner, BcProgress)>,
) -> Result<(Actioner, BcProgress), NnError> {
    if examples.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let (mut model, mut progress) = match resume {
        Some(r) => r,
        None => {
            let m = Actioner::new(&cfg.model, vocab_len);
            let optimizer = Optimizer::new(&cfg.train, &m);
            (m, BcProgress { optimizer, epochs_done: 0 })
        }
    };
    let bs = cfg.train.batch_size.max(1);
    while progress.epochs_done < cfg.train.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut substream(cfg.train.seed, &format!("bc/epoch/{}", progress.epochs_done)));
        for chunk in order.chunks(bs) {
            let batch: Vec<&BcExample> = chunk.iter().map(|&i| &examples[i]).collect();
            crate::nn::train_step(&mut model, &mut progress.optimizer, &batch, |m, ex, g| {
                m.bc_loss_grad(&ex.state, ex.action, ex.object, g)
            })?;
        }
        progress.epochs_done += 1;
    }
    Ok((model, progress))
}

/// Fraction of examples whose argmax action matches the expert.
pub fn action_accuracy(model: &Actioner, examples: &[BcExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|ex| argmax(&model.predict(&ex.state).p_action) == ex.action)
        .count();
    hits as f64 / examples.len() as f64
}
