//! Contrastive scorer matching question-answer pairs to the policy's hidden state.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::actioner::{action_id, Actioner, HiddenState, StateInfo, START_ACTION};
use crate::math::{dot, expf, ln, softmax, sqrtf};
use crate::nn::{Activation, Cache, Checkpoint, DenseNet, Matrix, NnError, Optimizer, Parameterized, TrainConfig};
use crate::qagen::{oracle_qas, QaPair, QaType};
use crate::rng::substream;
use crate::text::{Vocab, PAD};
use crate::world::{observe, Episode};

pub const TAU_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct QaEvaluator {
    pub tok_emb: Matrix,
    pub qa_proj: DenseNet,
    pub state_proj: DenseNet,
    /// 1x1 learnable temperature.
    pub tau: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QaEvalConfig {
    pub token_embed: usize,
    pub e: usize,
    pub state_hidden: usize,
    pub tau_init: f64,
    pub tau_sample: f64,
    pub k: usize,
    pub train: TrainConfig,
}

impl Default for QaEvalConfig {
    fn default() -> Self {
        QaEvalConfig {
            token_embed: 32,
            e: 32,
            state_hidden: 64,
            tau_init: 0.07,
            tau_sample: 1.0,
            k: 5,
            train: TrainConfig {
                learning_rate: 3e-3,
                batch_size: 16,
                epochs: 8,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredQa {
    pub pair: QaPair,
    pub index: usize,
    pub score: f64,
}

fn normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = sqrtf(dot(x, x));
    if n < 1e-300 {
        let mut e = vec![0.0; x.len()];
        e[0] = 1.0;
        return (e, 0.0);
    }
    (x.iter().map(|v| v / n).collect(), n)
}

/// Backprop through `y = x / |x|`.
fn normalize_grad(y: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; y.len()];
    }
    let yg = dot(y, g);
    y.iter().zip(g).map(|(yi, gi)| (gi - yi * yg) / norm).collect()
}

struct QaTrace {
    q_ids: Vec<usize>,
    a_ids: Vec<usize>,
    cache: Cache,
    unit: Vec<f64>,
    norm: f64,
}

struct StateTrace {
    cache: Cache,
    unit: Vec<f64>,
    norm: f64,
}

impl QaEvaluator {
    pub fn new(cfg: &QaEvalConfig, vocab_len: usize, d: usize) -> QaEvaluator {
        let seed = cfg.train.seed;
        QaEvaluator {
            tok_emb: Matrix::glorot(vocab_len, cfg.token_embed, seed, "qaeval.tok_emb"),
            qa_proj: DenseNet::new(&[2 * cfg.token_embed, cfg.e], &[Activation::Identity], seed, "qaeval.qa_proj"),
            state_proj: DenseNet::new(
                &[d, cfg.state_hidden, cfg.e],
                &[Activation::Tanh, Activation::Identity],
                seed,
                "qaeval.state_proj",
            ),
            tau: Matrix {
                rows: 1,
                cols: 1,
                data: vec![cfg.tau_init],
            },
        }
    }

    pub fn temperature(&self) -> f64 {
        self.tau.data[0]
    }

    fn token_ids(&self, vocab: &Vocab, text: &str) -> Vec<usize> {
        let rows = self.tok_emb.rows;
        vocab
            .encode(text)
            .into_iter()
            .filter(|&t| t != PAD)
            .map(|t| (t as usize).min(rows - 1))
            .collect()
    }

    fn pooled(&self, q_ids: &[usize], a_ids: &[usize]) -> Vec<f64> {
        let e = self.tok_emb.cols;
        let mut x = vec![0.0; 2 * e];
        for (ids, off) in [(q_ids, 0), (a_ids, e)] {
            let w = 1.0 / ids.len().max(1) as f64;
            for &r in ids {
                for (o, v) in x[off..off + e].iter_mut().zip(self.tok_emb.row(r)) {
                    *o += w * v;
                }
            }
        }
        x
    }

    fn trace_qa(&self, vocab: &Vocab, pair: &QaPair) -> QaTrace {
        let q_ids = self.token_ids(vocab, &pair.question);
        let a_ids = self.token_ids(vocab, &pair.answer);
        let (y, cache) = self.qa_proj.forward(&self.pooled(&q_ids, &a_ids)).expect("pooled width");
        let (unit, norm) = normalize(&y);
        QaTrace {
            q_ids,
            a_ids,
            cache,
            unit,
            norm,
        }
    }

    fn trace_state(&self, h: &HiddenState) -> Result<StateTrace, NnError> {
        let (y, cache) = self.state_proj.forward(&h.h)?;
        let (unit, norm) = normalize(&y);
        Ok(StateTrace { cache, unit, norm })
    }

    pub fn embed_qa(&self, vocab: &Vocab, pair: &QaPair) -> Vec<f64> {
        self.trace_qa(vocab, pair).unit
    }

    pub fn embed_state(&self, h: &HiddenState) -> Result<Vec<f64>, NnError> {
        Ok(self.trace_state(h)?.unit)
    }

    /// Cosine similarity of the state and pair embeddings.
    pub fn score(&self, vocab: &Vocab, h: &HiddenState, pair: &QaPair) -> Result<f64, NnError> {
        Ok(dot(&self.embed_state(h)?, &self.embed_qa(vocab, pair)))
    }

    /// Top-k by score (candidate order breaks ties) and one pair sampled from
    /// `softmax(score / tau_sample)` over the top-k. Returns `None` for an empty set.
    pub fn rank_and_sample<R: Rng>(
        &self,
        vocab: &Vocab,
        h: &HiddenState,
        candidates: &[QaPair],
        k: usize,
        tau_sample: f64,
        rng: &mut R,
    ) -> Result<Option<(Vec<ScoredQa>, usize)>, NnError> {
        if candidates.is_empty() {
            return Ok(None);
        }
        let s = self.embed_state(h)?;
        let scores: Vec<f64> = candidates.iter().map(|c| dot(&s, &self.embed_qa(vocab, c))).collect();
        let top = top_k(&scores, k.max(1));
        let logits: Vec<f64> = top.iter().map(|&i| scores[i] / tau_sample).collect();
        let probs = softmax(&logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let ranked = top
            .iter()
            .map(|&i| ScoredQa {
                pair: candidates[i].clone(),
                index: i,
                score: scores[i],
            })
            .collect();
        Ok(Some((ranked, chosen)))
    }

    /// Symmetric N-pair loss over one batch; accumulates gradients.
    pub fn contrastive_loss_grad(
        &self,
        vocab: &Vocab,
        batch: &[(HiddenState, QaPair)],
        grads: &mut [Vec<f64>],
    ) -> Result<f64, NnError> {
        let n = batch.len();
        if n == 0 {
            return Err(NnError::EmptyBatch);
        }
        let tau = self.temperature();
        let st: Vec<StateTrace> = batch.iter().map(|(h, _)| self.trace_state(h)).collect::<Result<_, _>>()?;
        let qt: Vec<QaTrace> = batch.iter().map(|(_, p)| self.trace_qa(vocab, p)).collect();
        let sim: Vec<Vec<f64>> = st
            .iter()
            .map(|s| qt.iter().map(|q| dot(&s.unit, &q.unit) / tau).collect())
            .collect();
        let mut d_sim = vec![vec![0.0; n]; n];
        let mut loss = 0.0;
        let half_n = 0.5 / n as f64;
        for i in 0..n {
            let p = softmax(&sim[i]);
            loss -= half_n * ln(p[i]);
            for j in 0..n {
                d_sim[i][j] += half_n * (p[j] - if i == j { 1.0 } else { 0.0 });
            }
        }
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| sim[i][j]).collect();
            let p = softmax(&col);
            loss -= half_n * ln(p[j]);
            for i in 0..n {
                d_sim[i][j] += half_n * (p[i] - if i == j { 1.0 } else { 0.0 });
            }
        }
        let e = st[0].unit.len();
        let mut g_tau = 0.0;
        let mut g_s = vec![vec![0.0; e]; n];
        let mut g_q = vec![vec![0.0; e]; n];
        for i in 0..n {
            for j in 0..n {
                let d = d_sim[i][j];
                g_tau -= d * sim[i][j] / tau;
                for k in 0..e {
                    g_s[i][k] += d * qt[j].unit[k] / tau;
                    g_q[j][k] += d * st[i].unit[k] / tau;
                }
            }
        }
        let te = self.tok_emb.cols;
        for i in 0..n {
            let gy = normalize_grad(&st[i].unit, st[i].norm, &g_s[i]);
            self.state_proj.backward_into(&st[i].cache, &gy, &mut grads[3..7]);
            let gy = normalize_grad(&qt[i].unit, qt[i].norm, &g_q[i]);
            let gx = self.qa_proj.backward_into(&qt[i].cache, &gy, &mut grads[1..3]);
            for (ids, off) in [(&qt[i].q_ids, 0), (&qt[i].a_ids, te)] {
                let w = 1.0 / ids.len().max(1) as f64;
                for &r in ids.iter() {
                    for (g, x) in grads[0][r * te..(r + 1) * te].iter_mut().zip(&gx[off..off + te]) {
                        *g += w * x;
                    }
                }
            }
        }
        grads[7][0] += g_tau;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_tensor("qaeval.tok_emb", &self.tok_emb);
        ck.push_dense("qaeval.qa_proj", &self.qa_proj);
        ck.push_dense("qaeval.state_proj", &self.state_proj);
        ck.push_tensor("qaeval.tau", &self.tau);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<QaEvaluator, NnError> {
        let m = QaEvaluator {
            tok_emb: ck.tensor("qaeval.tok_emb")?,
            qa_proj: ck.dense("qaeval.qa_proj")?,
            state_proj: ck.dense("qaeval.state_proj")?,
            tau: ck.tensor("qaeval.tau")?,
        };
        if m.qa_proj.input_dim() != 2 * m.tok_emb.cols
            || m.qa_proj.output_dim() != m.state_proj.output_dim()
            || m.tau.data.len() != 1
            || m.temperature() < TAU_MIN
        {
            return Err(NnError::BadCheckpoint("qa evaluator shapes are inconsistent"));
        }
        Ok(m)
    }
}

impl Parameterized for QaEvaluator {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.tok_emb.data];
        v.extend(self.qa_proj.tensors());
        v.extend(self.state_proj.tensors());
        v.push(&self.tau.data);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.tok_emb.data];
        v.extend(self.qa_proj.tensors_mut());
        v.extend(self.state_proj.tensors_mut());
        v.push(&mut self.tau.data);
        v
    }
}

/// Indices of the `k` largest scores, descending; lower index first on ties.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx
}

/// Splits pairs into batches of up to `n` whose positive answers are all distinct.
pub fn distinct_batches(pairs: &[(HiddenState, QaPair)], n: usize, order: &[usize]) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut open: Vec<Vec<usize>> = Vec::new();
    for &i in order {
        let answer = &pairs[i].1.answer;
        let slot = open
            .iter()
            .position(|b| b.len() < n && !b.iter().any(|&j| &pairs[j].1.answer == answer));
        match slot {
            Some(s) => {
                open[s].push(i);
                if open[s].len() == n {
                    batches.push(open.remove(s));
                }
            }
            None => open.push(vec![i]),
        }
    }
    batches.extend(open.into_iter().filter(|b| b.len() > 1));
    batches
}

pub fn train_contrastive(
    vocab: &Vocab,
    pairs: &[(HiddenState, QaPair)],
    d: usize,
    cfg: &QaEvalConfig,
) -> Result<QaEvaluator, NnError> {
    if pairs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut model = QaEvaluator::new(cfg, vocab.len(), d);
    let mut opt = Optimizer::new(&cfg.train, &model);
    for epoch in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut substream(cfg.train.seed, &format!("qaeval/epoch/{epoch}")));
        for b in distinct_batches(pairs, cfg.train.batch_size.max(2), &order) {
            let batch: Vec<(HiddenState, QaPair)> = b.iter().map(|&i| pairs[i].clone()).collect();
            let mut grads = model.zero_grads();
            let loss = model.contrastive_loss_grad(vocab, &batch, &mut grads)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteLoss);
            }
            opt.apply(&mut model, &mut grads);
            if model.tau.data[0] < TAU_MIN {
                model.tau.data[0] = TAU_MIN;
            }
        }
    }
    Ok(model)
}

/// Fraction of states whose own positive scores highest within its batch.
pub fn retrieval_accuracy(model: &QaEvaluator, vocab: &Vocab, pairs: &[(HiddenState, QaPair)], n: usize) -> f64 {
    let order: Vec<usize> = (0..pairs.len()).collect();
    let batches: Vec<Vec<usize>> = distinct_batches(pairs, n, &order).into_iter().filter(|b| b.len() == n).collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for b in batches {
        let qs: Vec<Vec<f64>> = b.iter().map(|&i| model.embed_qa(vocab, &pairs[i].1)).collect();
        for (row, &i) in b.iter().enumerate() {
            let s = model.embed_state(&pairs[i].0).expect("hidden width");
            let scores: Vec<f64> = qs.iter().map(|q| dot(&s, q)).collect();
            if top_k(&scores, 1)[0] == row {
                hits += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// `(hidden state, current-sub-goal oracle pair)` at every `stride`-th
/// expert step, with states built exactly as the episode loop builds them.
pub fn training_pairs(actioner: &Actioner, vocab: &Vocab, episodes: &[Episode], stride: usize) -> Vec<(HiddenState, QaPair)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut counter = 0usize;
    for ep in episodes {
        let worlds = ep.replay_worlds();
        let mut state = StateInfo::new(vocab.encode_dialog(&ep.dialog));
        let mut prev = START_ACTION;
        for (t, a) in ep.expert_actions.iter().enumerate() {
            state.push(prev, observe(&worlds[t]));
            state.truncate_to(actioner.window);
            prev = action_id(a.kind());
            counter += 1;
            if !(counter - 1).is_multiple_of(stride) {
                continue;
            }
            let z = ep.remaining_subgoals(t);
            if let Some(p) = oracle_qas(&worlds[t], &z).into_iter().find(|p| p.qa_type == QaType::CurrentSubgoal) {
                out.push((actioner.encode(&state), p));
            }
        }
    }
    out
}

/// Probability mass `softmax(scores / tau)` places on the argmax, for sanity checks.
pub fn sampling_peak(scores: &[f64], tau: f64) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| expf((s - m) / tau)).sum();
    1.0 / z
}
