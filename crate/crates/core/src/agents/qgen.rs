use crate::error::{check_index, Error, Result};
use crate::game::{ExpertEpisode, GameWorld, QaPair, Vocab, MAX_QUESTIONS};
use crate::nn::{forward_softmax, ParamId, ParamStore, Tape, Var, INIT_SCALE};
use crate::sampling::SeededRng;

use super::{GatedCell, ModelConfig, PolicyTrace, Pretrain};

/// Question-level sequence-to-sequence generator.
///
/// The encoder starts from a projection of the world summary (sum of
/// per-object attribute embeddings), consumes `<sos>` and then every token of
/// the history: question words followed by the answer word. The decoder
/// starts from the final encoder state, reads that state again at every step
/// next to the previous word, and shares the encoder's word embeddings.
#[derive(Clone, Debug)]
pub struct QGenPolicy {
    pub store: ParamStore,
    embed: ParamId,
    world_category: ParamId,
    world_column: ParamId,
    world_row: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    encoder: GatedCell,
    decoder: GatedCell,
    out_w: ParamId,
    out_b: ParamId,
    hidden: usize,
    vocab_size: usize,
    num_categories: usize,
}

/// Incremental history encoding on a tape. Extending with one QA pair yields
/// exactly the state a fresh encoding of the longer history would.
#[derive(Clone, Copy, Debug)]
pub struct HistoryEncoder {
    pub state: Var,
    pub questions: usize,
}

impl QGenPolicy {
    pub fn new(vocab_size: usize, num_categories: usize, model: &ModelConfig, rng: &mut SeededRng) -> Self {
        let (h, e) = (model.hidden, model.embedding);
        let mut store = ParamStore::new();
        let embed = store.add_uniform("qgen.embed", vocab_size, e, INIT_SCALE, rng);
        let world_category = store.add_uniform("qgen.world.category", num_categories, e, INIT_SCALE, rng);
        let world_column = store.add_uniform("qgen.world.column", 3, e, INIT_SCALE, rng);
        let world_row = store.add_uniform("qgen.world.row", 3, e, INIT_SCALE, rng);
        let init_w = store.add_uniform("qgen.init.w", h, e, INIT_SCALE, rng);
        let init_b = store.add_uniform("qgen.init.b", h, 1, INIT_SCALE, rng);
        let encoder = GatedCell::new(&mut store, "qgen.encoder", e, h, rng);
        let decoder = GatedCell::new(&mut store, "qgen.decoder", e + h, h, rng);
        let out_w = store.add_uniform("qgen.out.w", vocab_size, 2 * h, INIT_SCALE, rng);
        let out_b = store.add_uniform("qgen.out.b", vocab_size, 1, INIT_SCALE, rng);
        Self {
            store,
            embed,
            world_category,
            world_column,
            world_row,
            init_w,
            init_b,
            encoder,
            decoder,
            out_w,
            out_b,
            hidden: h,
            vocab_size,
            num_categories,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn check_world(&self, world: &GameWorld) -> Result<()> {
        for o in &world.objects {
            check_index(o.category, self.num_categories)?;
        }
        Ok(())
    }

    fn world_summary(&self, tape: &mut Tape, world: &GameWorld) -> Var {
        let s = &self.store;
        let per_object: Vec<Var> = world
            .canonical_objects()
            .iter()
            .map(|o| {
                let c = tape.row(s, self.world_category, o.category);
                let x = tape.row(s, self.world_column, o.column);
                let y = tape.row(s, self.world_row, o.row);
                let cx = tape.add(c, x);
                tape.add(cx, y)
            })
            .collect();
        tape.sum(&per_object)
    }

    /// Encoder state for the empty history.
    pub fn begin(&self, tape: &mut Tape, world: &GameWorld) -> HistoryEncoder {
        let summary = self.world_summary(tape, world);
        let pre = tape.affine(&self.store, self.init_w, Some(self.init_b), summary);
        let h0 = tape.tanh(pre);
        let x = tape.row(&self.store, self.embed, Vocab::SOS);
        let state = self.encoder.step(tape, &self.store, x, h0);
        HistoryEncoder { state, questions: 0 }
    }

    pub fn extend(&self, tape: &mut Tape, enc: &mut HistoryEncoder, qa: &QaPair) {
        let mut h = enc.state;
        for &tok in qa.question.iter().chain(std::iter::once(&qa.answer.token())) {
            let x = tape.row(&self.store, self.embed, tok);
            h = self.encoder.step(tape, &self.store, x, h);
        }
        enc.state = h;
        enc.questions += 1;
    }

    /// Decoder state for the first word of the next question: the encoder
    /// state both as initial recurrent state and as context.
    pub fn decoder_start(&self, tape: &mut Tape, enc: &HistoryEncoder) -> Var {
        tape.concat(&[enc.state, enc.state])
    }

    /// One decoder step: returns `(logits, next state)`. A decoder state is
    /// `[h; context]`; the context is carried unchanged through a question.
    pub fn step_on(&self, tape: &mut Tape, state: Var, prev_token: usize) -> (Var, Var) {
        let h = tape.slice(state, 0, self.hidden);
        let context = tape.slice(state, self.hidden, 2 * self.hidden);
        let x = tape.row(&self.store, self.embed, prev_token);
        let input = tape.concat(&[x, context]);
        let h = self.decoder.step(tape, &self.store, input, h);
        let next = tape.concat(&[h, context]);
        let logits = tape.affine(&self.store, self.out_w, Some(self.out_b), next);
        (logits, next)
    }

    /// Width of a decoder state.
    pub fn state_width(&self) -> usize {
        2 * self.hidden
    }

    /// Decoder state for an encoder state from [`encode_history`].
    pub fn decoder_state(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        if encoded.len() != self.hidden {
            return Err(Error::InvalidInput(format!(
                "encoder state has width {}, expected {}",
                encoded.len(),
                self.hidden
            )));
        }
        Ok([encoded, encoded].concat())
    }

    fn check_dialogue(&self, dialogue: &[QaPair]) -> Result<()> {
        if dialogue.len() > MAX_QUESTIONS {
            return Err(Error::Contract(format!(
                "history of {} questions exceeds {MAX_QUESTIONS}",
                dialogue.len()
            )));
        }
        for &t in dialogue.iter().flat_map(|qa| qa.question.iter()) {
            check_index(t, self.vocab_size)?;
        }
        Ok(())
    }
}

/// Fixed-size encoding of `(dialogue, world)`.
pub fn encode_history(policy: &QGenPolicy, dialogue: &[QaPair], world: &GameWorld) -> Result<Vec<f64>> {
    policy.check_dialogue(dialogue)?;
    policy.check_world(world)?;
    let mut tape = Tape::new();
    let mut enc = policy.begin(&mut tape, world);
    for qa in dialogue {
        policy.extend(&mut tape, &mut enc, qa);
    }
    Ok(tape.value(enc.state).to_vec())
}

/// Token pmf and next decoder state from a decoder state and previous token.
pub fn qgen_step(policy: &QGenPolicy, state: &[f64], prev_token: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_index(prev_token, policy.vocab_size)?;
    if state.len() != policy.state_width() {
        return Err(Error::InvalidInput(format!(
            "decoder state has width {}, expected {}",
            state.len(),
            policy.state_width()
        )));
    }
    let mut tape = Tape::new();
    let s = tape.input(state.to_vec());
    let (logits, h) = policy.step_on(&mut tape, s, prev_token);
    Ok((forward_softmax(tape.value(logits))?, tape.value(h).to_vec()))
}

impl Pretrain for QGenPolicy {
    fn expert_trace(&self, _vocab: &Vocab, episode: &ExpertEpisode) -> Result<PolicyTrace> {
        self.check_dialogue(&episode.dialogue)?;
        self.check_world(&episode.world)?;
        let mut trace = PolicyTrace::default();
        let tape = &mut trace.tape;
        let mut enc = self.begin(tape, &episode.world);
        for qa in &episode.dialogue {
            let mut h = self.decoder_start(tape, &enc);
            let mut prev = Vocab::SOS;
            for &tok in &qa.question {
                let (z, next) = self.step_on(tape, h, prev);
                trace.decisions.push((z, tok));
                h = next;
                prev = tok;
            }
            self.extend(tape, &mut enc, qa);
        }
        if episode.ended_by_eod {
            let start = self.decoder_start(tape, &enc);
            let (z, _) = self.step_on(tape, start, Vocab::SOS);
            trace.decisions.push((z, Vocab::EOD));
        }
        Ok(trace)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}
