//! Symbolic guessing game: sampled worlds, a rule-based oracle, the reward,
//! and a scripted expert questioner used for behavior cloning.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::sampling::SeededRng;

pub const COLUMNS: [&str; 3] = ["left", "center", "right"];
pub const ROWS: [&str; 3] = ["top", "middle", "bottom"];
pub const FILLERS: [&str; 4] = ["is", "it", "a", "in"];
const CATEGORY_NAMES: [&str; 12] = [
    "cat", "dog", "car", "ball", "cup", "book", "chair", "tree", "bird", "lamp", "shoe", "kite",
];

/// Upper bound on questions per dialogue.
pub const MAX_QUESTIONS: usize = 8;
/// Upper bound on tokens per question, terminator included.
pub const MAX_WORDS: usize = 12;
const RESAMPLE_CAP: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Category(usize),
    Column(usize),
    Row(usize),
}

/// Token ids are laid out as: `<sos> <eoq> <eod> yes no n/a`, the fillers,
/// the six spatial words (columns then rows), then one token per category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    num_categories: usize,
}

impl Vocab {
    pub const SOS: usize = 0;
    pub const EOQ: usize = 1;
    pub const EOD: usize = 2;
    pub const YES: usize = 3;
    pub const NO: usize = 4;
    pub const NA: usize = 5;
    const FILLER_BASE: usize = 6;
    const SPATIAL_BASE: usize = Self::FILLER_BASE + FILLERS.len();
    const CATEGORY_BASE: usize = Self::SPATIAL_BASE + 6;

    pub fn new(num_categories: usize) -> Self {
        let mut tokens: Vec<String> = ["<sos>", "<eoq>", "<eod>", "yes", "no", "n/a"]
            .iter()
            .chain(FILLERS.iter())
            .chain(COLUMNS.iter())
            .chain(ROWS.iter())
            .map(|s| s.to_string())
            .collect();
        for c in 0..num_categories {
            tokens.push(match CATEGORY_NAMES.get(c) {
                Some(name) => name.to_string(),
                None => format!("category{c}"),
            });
        }
        Self { tokens, num_categories }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn word(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == word)
    }

    pub fn filler(&self, i: usize) -> usize {
        Self::FILLER_BASE + i
    }

    pub fn attribute(&self, id: usize) -> Option<Attribute> {
        if (Self::SPATIAL_BASE..Self::SPATIAL_BASE + 3).contains(&id) {
            Some(Attribute::Column(id - Self::SPATIAL_BASE))
        } else if (Self::SPATIAL_BASE + 3..Self::CATEGORY_BASE).contains(&id) {
            Some(Attribute::Row(id - Self::SPATIAL_BASE - 3))
        } else if (Self::CATEGORY_BASE..Self::CATEGORY_BASE + self.num_categories).contains(&id) {
            Some(Attribute::Category(id - Self::CATEGORY_BASE))
        } else {
            None
        }
    }

    pub fn attribute_token(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Column(c) => Self::SPATIAL_BASE + c,
            Attribute::Row(r) => Self::SPATIAL_BASE + 3 + r,
            Attribute::Category(c) => Self::CATEGORY_BASE + c,
        }
    }

    /// All attributes in canonical order: categories, then columns, then rows.
    pub fn attributes(&self) -> Vec<Attribute> {
        (0..self.num_categories)
            .map(Attribute::Category)
            .chain((0..3).map(Attribute::Column))
            .chain((0..3).map(Attribute::Row))
            .collect()
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|t| self.word(*t)).collect::<Vec<_>>().join(" ")
    }

    /// One `id<TAB>word` line per token.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{i}\t{t}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Object {
    pub category: usize,
    pub column: usize,
    pub row: usize,
}

impl Object {
    pub fn has(&self, attr: Attribute) -> bool {
        match attr {
            Attribute::Category(c) => self.category == c,
            Attribute::Column(c) => self.column == c,
            Attribute::Row(r) => self.row == r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_categories: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { num_categories: 5, min_objects: 8, max_objects: 8 }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(Error::Config("need at least 2 categories".into()));
        }
        if self.min_objects < 2 || self.max_objects < self.min_objects {
            return Err(Error::Config(format!(
                "object count range [{}, {}] invalid (minimum 2)",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameWorld {
    pub objects: Vec<Object>,
    pub target: usize,
    pub seed: u64,
}

impl GameWorld {
    pub fn target_object(&self) -> Object {
        self.objects[self.target]
    }

    /// True when some other object differs from the target in an attribute.
    pub fn is_distinguishable(&self) -> bool {
        let t = self.target_object();
        self.objects.iter().enumerate().any(|(k, o)| k != self.target && *o != t)
    }

    /// Objects in canonical attribute order, for order-independent sums.
    pub fn canonical_objects(&self) -> Vec<Object> {
        let mut objs = self.objects.clone();
        objs.sort();
        objs
    }

    /// Deterministic world for a given seed.
    pub fn from_seed(seed: u64, config: &WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        for _ in 0..RESAMPLE_CAP {
            let n = config.min_objects + rng.below(config.max_objects - config.min_objects + 1);
            let objects: Vec<Object> = (0..n)
                .map(|_| Object {
                    category: rng.below(config.num_categories),
                    column: rng.below(3),
                    row: rng.below(3),
                })
                .collect();
            let target = rng.below(n);
            let world = GameWorld { objects, target, seed };
            if world.is_distinguishable() {
                return Ok(world);
            }
        }
        Err(Error::Config(format!(
            "no distinguishable world after {RESAMPLE_CAP} samples"
        )))
    }
}

pub fn new_game(rng: &mut SeededRng, config: &WorldConfig) -> Result<GameWorld> {
    GameWorld::from_seed(rng.next_u64(), config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    NotApplicable,
}

impl Answer {
    pub fn token(self) -> usize {
        match self {
            Answer::Yes => Vocab::YES,
            Answer::No => Vocab::NO,
            Answer::NotApplicable => Vocab::NA,
        }
    }

    pub fn index(self) -> usize {
        self.token() - Vocab::YES
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::NotApplicable => "n/a",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    /// Question tokens, terminator included.
    pub question: Vec<usize>,
    pub answer: Answer,
}

/// Reads the question as a conjunction of every attribute word it contains.
/// Returns `None` when the question mentions no attribute.
pub fn evaluate_question(vocab: &Vocab, object: Object, question: &[usize]) -> Option<bool> {
    let mut any = false;
    let mut all = true;
    for attr in question.iter().filter_map(|t| vocab.attribute(*t)) {
        any = true;
        all &= object.has(attr);
    }
    any.then_some(all)
}

pub fn oracle_answer(vocab: &Vocab, world: &GameWorld, question: &[usize]) -> Answer {
    match evaluate_question(vocab, world.target_object(), question) {
        Some(true) => Answer::Yes,
        Some(false) => Answer::No,
        None => Answer::NotApplicable,
    }
}

pub fn guess_reward(world: &GameWorld, guess: usize) -> Result<f64> {
    check_index(guess, world.objects.len())?;
    Ok(if guess == world.target { 1.0 } else { 0.0 })
}

/// Indices of objects consistent with every answered question.
pub fn candidates(vocab: &Vocab, world: &GameWorld, history: &[QaPair]) -> Vec<usize> {
    (0..world.objects.len())
        .filter(|&k| {
            history.iter().all(|qa| match (evaluate_question(vocab, world.objects[k], &qa.question), qa.answer) {
                (Some(v), Answer::Yes) => v,
                (Some(v), Answer::No) => !v,
                _ => true,
            })
        })
        .collect()
}

/// First object consistent with the dialogue.
pub fn consistency_guess(vocab: &Vocab, world: &GameWorld, history: &[QaPair]) -> usize {
    candidates(vocab, world, history).first().copied().unwrap_or(0)
}

pub fn question_for(vocab: &Vocab, attr: Attribute) -> Vec<usize> {
    let lead = match attr {
        Attribute::Category(_) => vocab.filler(2),
        _ => vocab.filler(3),
    };
    vec![vocab.filler(0), vocab.filler(1), lead, vocab.attribute_token(attr), Vocab::EOQ]
}

/// Next expert question, or `None` for end-of-dialogue. Picks the attribute
/// whose yes/no split of the candidate set is most balanced; ties go to the
/// earliest attribute in canonical order.
pub fn scripted_expert_question(vocab: &Vocab, world: &GameWorld, history: &[QaPair]) -> Option<Vec<usize>> {
    if history.len() >= MAX_QUESTIONS {
        return None;
    }
    let cand = candidates(vocab, world, history);
    if cand.len() <= 1 {
        return None;
    }
    let mut best: Option<(usize, Attribute)> = None;
    for attr in vocab.attributes() {
        let yes = cand.iter().filter(|&&k| world.objects[k].has(attr)).count();
        let split = yes.min(cand.len() - yes);
        if split > 0 && best.is_none_or(|(s, _)| split > s) {
            best = Some((split, attr));
        }
    }
    best.map(|(_, attr)| question_for(vocab, attr))
}

/// A complete expert dialogue with the target as the guess label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpertEpisode {
    pub world: GameWorld,
    pub dialogue: Vec<QaPair>,
    pub ended_by_eod: bool,
}

pub fn expert_episode(vocab: &Vocab, world: GameWorld) -> ExpertEpisode {
    let mut dialogue = Vec::new();
    while let Some(q) = scripted_expert_question(vocab, &world, &dialogue) {
        let answer = oracle_answer(vocab, &world, &q);
        dialogue.push(QaPair { question: q, answer });
    }
    let ended_by_eod = dialogue.len() < MAX_QUESTIONS;
    ExpertEpisode { world, dialogue, ended_by_eod }
}

/// Appends records as JSON lines.
pub fn append_jsonl<T: Serialize>(mut out: impl Write, records: &[T]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(category: usize, column: usize, row: usize) -> Object {
        Object { category, column, row }
    }

    #[test]
    fn vocabulary_layout() {
        let v = Vocab::new(5);
        assert_eq!(v.len(), 21);
        assert_eq!(v.word(Vocab::EOD), "<eod>");
        assert_eq!(v.attribute(v.id("cat").unwrap()), Some(Attribute::Category(0)));
        assert_eq!(v.attribute(v.id("right").unwrap()), Some(Attribute::Column(2)));
        assert_eq!(v.attribute(v.id("top").unwrap()), Some(Attribute::Row(0)));
        assert_eq!(v.attribute(v.id("is").unwrap()), None);
        for a in v.attributes() {
            assert_eq!(v.attribute(v.attribute_token(a)), Some(a));
        }
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("0\t<sos>\n1\t<eoq>\n"));
    }

    #[test]
    fn worlds_are_deterministic() {
        let cfg = WorldConfig { num_categories: 5, min_objects: 4, max_objects: 4 };
        let a = new_game(&mut SeededRng::new(9), &cfg).unwrap();
        let b = new_game(&mut SeededRng::new(9), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), 4);
    }

    #[test]
    fn bad_configs_rejected() {
        let one = WorldConfig { num_categories: 5, min_objects: 1, max_objects: 1 };
        assert!(matches!(GameWorld::from_seed(0, &one), Err(Error::Config(_))));
        let mono = WorldConfig { num_categories: 1, min_objects: 3, max_objects: 3 };
        assert!(GameWorld::from_seed(0, &mono).is_err());
    }

    #[test]
    fn oracle_semantics() {
        let v = Vocab::new(5);
        let w = GameWorld { objects: vec![obj(0, 0, 0), obj(1, 2, 2)], target: 0, seed: 0 };
        let cat = v.id("cat").unwrap();
        let dog = v.id("dog").unwrap();
        let left = v.id("left").unwrap();
        let bottom = v.id("bottom").unwrap();
        assert_eq!(oracle_answer(&v, &w, &[v.filler(0), cat, Vocab::EOQ]), Answer::Yes);
        assert_eq!(oracle_answer(&v, &w, &[dog, Vocab::EOQ]), Answer::No);
        assert_eq!(oracle_answer(&v, &w, &[cat, left, Vocab::EOQ]), Answer::Yes);
        assert_eq!(oracle_answer(&v, &w, &[cat, bottom, Vocab::EOQ]), Answer::No);
        assert_eq!(oracle_answer(&v, &w, &[v.filler(0), v.filler(1), Vocab::EOQ]), Answer::NotApplicable);
        assert_eq!(oracle_answer(&v, &w, &[]), Answer::NotApplicable);
    }

    #[test]
    fn reward_rule() {
        let w = GameWorld { objects: vec![obj(0, 0, 0), obj(1, 0, 0), obj(2, 0, 0)], target: 1, seed: 0 };
        assert_eq!(guess_reward(&w, 1).unwrap(), 1.0);
        assert_eq!(guess_reward(&w, 0).unwrap(), 0.0);
        assert!(matches!(guess_reward(&w, 3), Err(Error::Index { index: 3, len: 3 })));
    }

    #[test]
    fn expert_asks_balanced_category_first() {
        let v = Vocab::new(5);
        // two cats, two dogs, all on distinct cells
        let w = GameWorld {
            objects: vec![obj(0, 0, 0), obj(0, 2, 2), obj(1, 0, 2), obj(1, 2, 0)],
            target: 2,
            seed: 0,
        };
        let q = scripted_expert_question(&v, &w, &[]).unwrap();
        assert!(q.contains(&v.id("cat").unwrap()));
        let ep = expert_episode(&v, w.clone());
        assert_eq!(ep.dialogue.len(), 2);
        assert!(ep.ended_by_eod);
        assert_eq!(candidates(&v, &w, &ep.dialogue), vec![2]);
        let guess = consistency_guess(&v, &w, &ep.dialogue);
        assert_eq!(guess_reward(&w, guess).unwrap(), 1.0);
    }

    #[test]
    fn expert_stops_on_singleton_or_unsplittable() {
        let v = Vocab::new(3);
        let w = GameWorld { objects: vec![obj(0, 0, 0), obj(1, 1, 1)], target: 0, seed: 0 };
        let q = question_for(&v, Attribute::Category(0));
        let history = vec![QaPair { answer: oracle_answer(&v, &w, &q), question: q }];
        assert_eq!(scripted_expert_question(&v, &w, &history), None);
        let twins = GameWorld { objects: vec![obj(0, 0, 0), obj(0, 0, 0), obj(1, 0, 0)], target: 0, seed: 0 };
        let ep = expert_episode(&v, twins);
        assert_eq!(ep.dialogue.len(), 1);
    }

    #[test]
    fn sampled_worlds_are_distinguishable() {
        let cfg = WorldConfig { num_categories: 2, min_objects: 2, max_objects: 3 };
        let mut rng = SeededRng::new(17);
        for _ in 0..10_000 {
            let w = new_game(&mut rng, &cfg).unwrap();
            assert!(w.is_distinguishable());
            assert!((2..=3).contains(&w.objects.len()) && w.target < w.objects.len());
        }
    }
}
