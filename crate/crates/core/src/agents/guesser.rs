use crate::error::{check_index, Error, Result};
use crate::game::{ExpertEpisode, GameWorld, QaPair, Vocab};
use crate::nn::{forward_softmax, ParamId, ParamStore, Tape, Var, INIT_SCALE};
use crate::sampling::SeededRng;

use super::{GatedCell, ModelConfig, PolicyTrace, Pretrain};

/// Init range of the answer gates and object embeddings, which enter the
/// scores multiplicatively.
const GATE_SCALE: f64 = 0.5;

/// Two-hop attention over encoded QA facts, scored against object embeddings.
///
/// Each completed QA pair becomes a fact: the recurrent encoding of the
/// question words, projected and gated elementwise by an answer embedding.
/// The first key is an MLP of the summed object embeddings; the second key
/// is an MLP of `[hop-1 summary; key 1]`. Object scores are dot products of
/// the hop-2 summary with each object embedding.
#[derive(Clone, Debug)]
pub struct GuesserNet {
    pub store: ParamStore,
    embed: ParamId,
    fact_cell: GatedCell,
    fact_w: ParamId,
    fact_b: ParamId,
    answer: ParamId,
    obj_category: ParamId,
    obj_column: ParamId,
    obj_row: ParamId,
    key1_w: ParamId,
    key1_b: ParamId,
    key2_w: ParamId,
    key2_b: ParamId,
    width: usize,
    vocab_size: usize,
    num_categories: usize,
}

/// Forward record of one guess.
#[derive(Clone, Debug)]
pub struct GuesserTrace {
    pub tape: Tape,
    pub logits: Var,
}

impl GuesserTrace {
    pub fn pmf(&self) -> Vec<f64> {
        forward_softmax(self.tape.value(self.logits)).expect("finite guesser scores")
    }

    pub fn into_policy_trace(self, choice: usize) -> PolicyTrace {
        PolicyTrace { decisions: vec![(self.logits, choice)], tape: self.tape }
    }
}

impl GuesserNet {
    pub fn new(vocab_size: usize, num_categories: usize, model: &ModelConfig, rng: &mut SeededRng) -> Self {
        let (f, e) = (model.hidden, model.embedding);
        let mut store = ParamStore::new();
        let embed = store.add_uniform("guesser.embed", vocab_size, e, INIT_SCALE, rng);
        let fact_cell = GatedCell::new(&mut store, "guesser.fact", e, f, rng);
        let fact_w = store.add_uniform("guesser.fact.proj.w", f, f, INIT_SCALE, rng);
        let fact_b = store.add_uniform("guesser.fact.proj.b", f, 1, INIT_SCALE, rng);
        let answer = store.add_uniform("guesser.answer", 3, f, GATE_SCALE, rng);
        let obj_category = store.add_uniform("guesser.object.category", num_categories, f, GATE_SCALE, rng);
        let obj_column = store.add_uniform("guesser.object.column", 3, f, GATE_SCALE, rng);
        let obj_row = store.add_uniform("guesser.object.row", 3, f, GATE_SCALE, rng);
        let key1_w = store.add_uniform("guesser.key1.w", f, f, INIT_SCALE, rng);
        let key1_b = store.add_uniform("guesser.key1.b", f, 1, INIT_SCALE, rng);
        let key2_w = store.add_uniform("guesser.key2.w", f, 2 * f, INIT_SCALE, rng);
        let key2_b = store.add_uniform("guesser.key2.b", f, 1, INIT_SCALE, rng);
        Self {
            store,
            embed,
            fact_cell,
            fact_w,
            fact_b,
            answer,
            obj_category,
            obj_column,
            obj_row,
            key1_w,
            key1_b,
            key2_w,
            key2_b,
            width: f,
            vocab_size,
            num_categories,
        }
    }

    fn validate(&self, dialogue: &[QaPair], world: &GameWorld) -> Result<()> {
        if world.objects.is_empty() {
            return Err(Error::InvalidInput("world has no objects".into()));
        }
        for o in &world.objects {
            check_index(o.category, self.num_categories)?;
        }
        for &t in dialogue.iter().flat_map(|qa| qa.question.iter()) {
            check_index(t, self.vocab_size)?;
        }
        Ok(())
    }

    fn fact(&self, tape: &mut Tape, qa: &QaPair) -> Var {
        let s = &self.store;
        let mut h = tape.input(vec![0.0; self.width]);
        for &tok in &qa.question {
            let x = tape.row(s, self.embed, tok);
            h = self.fact_cell.step(tape, s, x, h);
        }
        let pre = tape.affine(s, self.fact_w, Some(self.fact_b), h);
        let content = tape.tanh(pre);
        let gate = tape.row(s, self.answer, qa.answer.index());
        tape.mul(content, gate)
    }

    fn object(&self, tape: &mut Tape, o: crate::game::Object) -> Var {
        let s = &self.store;
        let c = tape.row(s, self.obj_category, o.category);
        let x = tape.row(s, self.obj_column, o.column);
        let y = tape.row(s, self.obj_row, o.row);
        let cx = tape.add(c, x);
        tape.add(cx, y)
    }

    fn attend(&self, tape: &mut Tape, facts: &[Var], key: Var) -> Var {
        if facts.is_empty() {
            return tape.input(vec![0.0; self.width]);
        }
        let scores: Vec<Var> = facts.iter().map(|f| tape.dot(*f, key)).collect();
        let stacked = tape.stack(&scores);
        let weights = tape.softmax(stacked);
        tape.weighted_sum(weights, facts)
    }

    /// Records the forward pass; returns the object score node.
    pub fn forward_on(&self, tape: &mut Tape, dialogue: &[QaPair], world: &GameWorld) -> Var {
        let s = &self.store;
        let facts: Vec<Var> = dialogue.iter().map(|qa| self.fact(tape, qa)).collect();
        let objects: Vec<Var> = world.objects.iter().map(|o| self.object(tape, *o)).collect();
        // canonical order keeps the key bit-identical under object permutations
        let canonical: Vec<Var> = world.canonical_objects().iter().map(|o| self.object(tape, *o)).collect();
        let scene = tape.sum(&canonical);
        let pre = tape.affine(s, self.key1_w, Some(self.key1_b), scene);
        let key1 = tape.tanh(pre);
        let hop1 = self.attend(tape, &facts, key1);
        let joined = tape.concat(&[hop1, key1]);
        let pre = tape.affine(s, self.key2_w, Some(self.key2_b), joined);
        let key2 = tape.tanh(pre);
        let hop2 = self.attend(tape, &facts, key2);
        let scores: Vec<Var> = objects.iter().map(|o| tape.dot(hop2, *o)).collect();
        tape.stack(&scores)
    }

    pub fn trace(&self, dialogue: &[QaPair], world: &GameWorld) -> Result<GuesserTrace> {
        self.validate(dialogue, world)?;
        let mut tape = Tape::new();
        let logits = self.forward_on(&mut tape, dialogue, world);
        Ok(GuesserTrace { tape, logits })
    }
}

/// Probability over the world's objects, in list order.
pub fn guesser_forward(net: &GuesserNet, dialogue: &[QaPair], world: &GameWorld) -> Result<Vec<f64>> {
    Ok(net.trace(dialogue, world)?.pmf())
}

impl Pretrain for GuesserNet {
    fn expert_trace(&self, _vocab: &Vocab, episode: &ExpertEpisode) -> Result<PolicyTrace> {
        let t = self.trace(&episode.dialogue, &episode.world)?;
        Ok(t.into_policy_trace(episode.world.target))
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}
