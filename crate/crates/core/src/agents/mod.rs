//! Learnable agents: the question generator and the guesser.

mod guesser;
mod qgen;

pub use guesser::{guesser_forward, GuesserNet, GuesserTrace};
pub use qgen::{encode_history, qgen_step, HistoryEncoder, QGenPolicy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ExpertEpisode, Vocab, WorldConfig};
use crate::nn::{Adam, ParamId, ParamStore, Tape, Var, INIT_SCALE};
use crate::sampling::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Recurrent state width (question generator and guesser facts).
    pub hidden: usize,
    /// Word and attribute embedding width for the question generator.
    pub embedding: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 32, embedding: 16 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Single-gate recurrent unit:
/// `f = sigmoid(Wf [x; h] + bf)`, `n = tanh(Wn [x; f*h] + bn)`,
/// `h' = h + f * (n - h)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GatedCell {
    gate_w: ParamId,
    gate_b: ParamId,
    cand_w: ParamId,
    cand_b: ParamId,
}

impl GatedCell {
    pub(crate) fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let width = input + hidden;
        Self {
            gate_w: store.add_uniform(&format!("{prefix}.gate.w"), hidden, width, INIT_SCALE, rng),
            gate_b: store.add_uniform(&format!("{prefix}.gate.b"), hidden, 1, INIT_SCALE, rng),
            cand_w: store.add_uniform(&format!("{prefix}.cand.w"), hidden, width, INIT_SCALE, rng),
            cand_b: store.add_uniform(&format!("{prefix}.cand.b"), hidden, 1, INIT_SCALE, rng),
        }
    }

    pub(crate) fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Var {
        let xh = tape.concat(&[x, h]);
        let pre = tape.affine(store, self.gate_w, Some(self.gate_b), xh);
        let f = tape.sigmoid(pre);
        let fh = tape.mul(f, h);
        let xfh = tape.concat(&[x, fh]);
        let pre = tape.affine(store, self.cand_w, Some(self.cand_b), xfh);
        let n = tape.tanh(pre);
        let delta = tape.sub(n, h);
        let step = tape.mul(f, delta);
        tape.add(h, step)
    }
}

/// A policy whose sampled decisions were recorded on one tape.
#[derive(Clone, Debug, Default)]
pub struct PolicyTrace {
    pub tape: Tape,
    /// `(logits node, chosen index)` for every sampled decision.
    pub decisions: Vec<(Var, usize)>,
}

impl PolicyTrace {
    /// Adds `scale * sum_t d ln f(a_t) / dw` over all recorded decisions.
    pub fn accumulate(&self, store: &mut ParamStore, scale: f64) -> Result<()> {
        if scale == 0.0 || self.decisions.is_empty() {
            return Ok(());
        }
        let mut seeds = Vec::with_capacity(self.decisions.len());
        for &(logits, action) in &self.decisions {
            let probs = crate::nn::forward_softmax(self.tape.value(logits))?;
            seeds.push((logits, crate::nn::log_prob_seed(&probs, action, scale)?));
        }
        self.tape.backward(store, &seeds);
        Ok(())
    }

    /// `sum_t ln f(a_t)` with the probability floor applied.
    pub fn log_prob(&self) -> Result<f64> {
        let mut total = 0.0;
        for &(z, a) in &self.decisions {
            let p = crate::nn::forward_softmax(self.tape.value(z))?;
            total += crate::nn::floored_ln(p[a]);
        }
        Ok(total)
    }
}

/// Supervised negative log-likelihood training on expert episodes.
pub trait Pretrain {
    /// Records the teacher-forced decisions of one episode.
    fn expert_trace(&self, vocab: &Vocab, episode: &ExpertEpisode) -> Result<PolicyTrace>;

    fn store_mut(&mut self) -> &mut ParamStore;
}

/// One optimizer step on the mean NLL of all expert decisions in `batch`.
/// Returns the loss before the step.
pub fn pretrain_nll_step<M: Pretrain>(
    model: &mut M,
    vocab: &Vocab,
    batch: &[ExpertEpisode],
    optimizer: &mut Adam,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty pretraining batch".into()));
    }
    let traces = batch
        .iter()
        .map(|ep| model.expert_trace(vocab, ep))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = traces.iter().map(|t| t.decisions.len()).sum();
    if count == 0 {
        return Err(Error::Contract("pretraining batch has no decisions".into()));
    }
    let mut loss = 0.0;
    for t in &traces {
        loss -= t.log_prob()?;
    }
    loss /= count as f64;
    let store = model.store_mut();
    store.zero_grads();
    for t in &traces {
        // ascent on mean log-likelihood
        t.accumulate(store, 1.0 / count as f64)?;
    }
    optimizer.step(store)?;
    Ok(loss)
}

/// Question generator and guesser, each with its own parameter store.
#[derive(Clone, Debug)]
pub struct Agents {
    pub qgen: QGenPolicy,
    pub guesser: GuesserNet,
}

impl Agents {
    pub fn new(vocab: &Vocab, world: &WorldConfig, model: &ModelConfig, rng: &mut SeededRng) -> Self {
        let qgen = QGenPolicy::new(vocab.len(), world.num_categories, model, rng);
        let guesser = GuesserNet::new(vocab.len(), world.num_categories, model, rng);
        Self { qgen, guesser }
    }
}
