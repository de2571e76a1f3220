//! Episode rollout and the policy-gradient update procedures.
//!
//! Every variant uses the same eligibility `d ln f(y) / dw` of the
//! *untempered* token pmf `f`; the variants differ only in the distribution
//! the tokens are drawn from:
//!
//! * `reinforce`    - `f` itself (temperature 1),
//! * `single_tpg`   - `f` tempered at a fixed global temperature,
//! * `parallel_tpg` - one rollout per configured temperature, gradients summed,
//! * `dynamic_tpg`  - a per-step temperature from the frequency heuristic.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{Agents, PolicyTrace, QGenPolicy};
use crate::error::{Error, Result};
use crate::game::{guess_reward, oracle_answer, GameWorld, QaPair, Vocab, WorldConfig, MAX_QUESTIONS, MAX_WORDS};
use crate::nn::forward_softmax;
use crate::sampling::{argmax, derive_seed, sample_categorical, temper, SeededRng};
use crate::tfidf::{dynamic_temperature, FrequencyStats, TemperatureBounds, TfidfStrategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Reinforce,
    SingleTpg,
    ParallelTpg,
    DynamicTpg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Reinforce, Variant::SingleTpg, Variant::ParallelTpg, Variant::DynamicTpg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Reinforce => "reinforce",
            Variant::SingleTpg => "single_tpg",
            Variant::ParallelTpg => "parallel_tpg",
            Variant::DynamicTpg => "dynamic_tpg",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// How the episode advantage is spread over the generated tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditMode {
    /// Every token gets the full `(r - b)`.
    #[default]
    Uniform,
    /// Every token gets `(r - b) / T` for `T` generated tokens.
    PerLength,
}

/// Which reward scales each rollout of a parallel group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelReward {
    /// Each temperature's rollout uses its own outcome.
    #[default]
    PerRollout,
    /// All rollouts share the mean outcome of the group.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub variant: Variant,
    pub tau_global: f64,
    pub parallel_temperatures: Vec<f64>,
    pub bounds: TemperatureBounds,
    pub tfidf: TfidfStrategy,
    pub qgen_learning_rate: f64,
    pub guesser_learning_rate: f64,
    pub batch_size: usize,
    pub max_questions: usize,
    pub max_words: usize,
    pub epochs: usize,
    pub worlds_per_epoch: usize,
    pub credit: CreditMode,
    pub parallel_reward: ParallelReward,
    /// Per-agent L2 cap on each batch gradient; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DynamicTpg,
            tau_global: 1.5,
            parallel_temperatures: vec![1.0, 1.5],
            bounds: TemperatureBounds::default(),
            tfidf: TfidfStrategy::default(),
            qgen_learning_rate: 0.001,
            guesser_learning_rate: 0.0001,
            batch_size: 64,
            max_questions: MAX_QUESTIONS,
            max_words: MAX_WORDS,
            epochs: 40,
            worlds_per_epoch: 512,
            credit: CreditMode::default(),
            parallel_reward: ParallelReward::default(),
            max_grad_norm: 50.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.qgen_learning_rate) || !positive(self.guesser_learning_rate) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !positive(self.tau_global) || !self.parallel_temperatures.iter().all(|t| positive(*t)) {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return Err(Error::Config("max_grad_norm must be finite and >= 0".into()));
        }
        if self.parallel_temperatures.is_empty() {
            return Err(Error::Config("parallel_temperatures is empty".into()));
        }
        if self.batch_size == 0 || self.max_questions == 0 || self.max_words == 0 {
            return Err(Error::Config("batch size and episode limits must be >= 1".into()));
        }
        if self.max_questions > MAX_QUESTIONS || self.max_words > MAX_WORDS {
            return Err(Error::Config(format!(
                "episode limits are capped at {MAX_QUESTIONS} questions of {MAX_WORDS} words"
            )));
        }
        self.bounds.validate()
    }

    /// Decoding rules for one batch step: one per parallel rollout.
    pub fn decodings<'a>(&self, stats: &'a FrequencyStats) -> Vec<Decoding<'a>> {
        match self.variant {
            Variant::Reinforce => vec![Decoding::Fixed(1.0)],
            Variant::SingleTpg => vec![Decoding::Fixed(self.tau_global)],
            Variant::ParallelTpg => self.parallel_temperatures.iter().map(|t| Decoding::Fixed(*t)).collect(),
            Variant::DynamicTpg => vec![Decoding::Dynamic { stats, bounds: self.bounds }],
        }
    }
}

/// Running average of the game success rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineTracker {
    pub episodes: u64,
    pub reward_sum: f64,
}

impl BaselineTracker {
    pub fn baseline(&self) -> f64 {
        self.reward_sum / self.episodes.max(1) as f64
    }

    pub fn update(&mut self, reward: f64) -> f64 {
        self.episodes += 1;
        self.reward_sum += reward;
        self.baseline()
    }
}

pub fn baseline_update(tracker: &mut BaselineTracker, reward: f64) -> f64 {
    tracker.update(reward)
}

/// How the next token is chosen from the untempered pmf.
#[derive(Clone, Copy, Debug)]
pub enum Decoding<'a> {
    /// Argmax; never consults temperature or randomness.
    Greedy,
    Fixed(f64),
    Dynamic { stats: &'a FrequencyStats, bounds: TemperatureBounds },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    pub token: usize,
    /// Applied temperature; `None` under greedy decoding.
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub world_seed: u64,
    pub rollout_seed: u64,
    pub dialogue: Vec<QaPair>,
    /// Every generated (non-forced) token in order, with its temperature.
    pub steps: Vec<TokenStep>,
    pub guess: usize,
    pub reward: f64,
}

impl EpisodeRecord {
    pub fn tokens(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.token).collect()
    }

    pub fn temperatures(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().filter_map(|s| s.temperature)
    }
}

/// A finished episode plus the forward records needed for its update.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub record: EpisodeRecord,
    pub qgen: PolicyTrace,
    pub guesser: PolicyTrace,
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeLimits {
    pub max_questions: usize,
    pub max_words: usize,
}

impl From<&TrainerConfig> for EpisodeLimits {
    fn from(c: &TrainerConfig) -> Self {
        Self { max_questions: c.max_questions, max_words: c.max_words }
    }
}

struct Generated {
    trace: PolicyTrace,
    dialogue: Vec<QaPair>,
    steps: Vec<TokenStep>,
}

/// Runs the question generator against the oracle. `choose` maps the
/// untempered pmf to `(token, applied temperature)`.
fn run_qgen<F>(
    policy: &QGenPolicy,
    vocab: &Vocab,
    world: &GameWorld,
    limits: EpisodeLimits,
    mut choose: F,
) -> Result<Generated>
where
    F: FnMut(&[f64]) -> Result<(usize, Option<f64>)>,
{
    let mut trace = PolicyTrace::default();
    let mut dialogue = Vec::new();
    let mut steps = Vec::new();
    let tape = &mut trace.tape;
    let mut enc = policy.begin(tape, world);
    'dialogue: for _ in 0..limits.max_questions {
        let mut h = policy.decoder_start(tape, &enc);
        let mut prev = Vocab::SOS;
        let mut question = Vec::new();
        loop {
            if question.len() + 1 == limits.max_words {
                question.push(Vocab::EOQ);
                break;
            }
            let (z, next) = policy.step_on(tape, h, prev);
            let probs = forward_softmax(tape.value(z))?;
            let (tok, temperature) = choose(&probs)?;
            trace.decisions.push((z, tok));
            steps.push(TokenStep { token: tok, temperature });
            if tok == Vocab::EOD {
                break 'dialogue;
            }
            question.push(tok);
            if tok == Vocab::EOQ {
                break;
            }
            h = next;
            prev = tok;
        }
        let qa = QaPair { answer: oracle_answer(vocab, world, &question), question };
        policy.extend(tape, &mut enc, &qa);
        dialogue.push(qa);
    }
    Ok(Generated { trace, dialogue, steps })
}

fn choose_token(probs: &[f64], decoding: &Decoding<'_>, rng: &mut SeededRng) -> Result<(usize, Option<f64>)> {
    match decoding {
        Decoding::Greedy => Ok((argmax(probs), None)),
        Decoding::Fixed(tau) => Ok((sample_categorical(&temper(probs, *tau)?, rng)?, Some(*tau))),
        Decoding::Dynamic { stats, bounds } => {
            let tau = dynamic_temperature(stats, argmax(probs), bounds);
            Ok((sample_categorical(&temper(probs, tau)?, rng)?, Some(tau)))
        }
    }
}

/// Plays one game. Under [`Decoding::Greedy`] both the questions and the
/// guess are argmax choices and `rng` is left untouched.
pub fn rollout_episode(
    agents: &Agents,
    vocab: &Vocab,
    world: &GameWorld,
    limits: EpisodeLimits,
    decoding: Decoding<'_>,
    rng: &mut SeededRng,
    rollout_seed: u64,
) -> Result<Rollout> {
    let gen = run_qgen(&agents.qgen, vocab, world, limits, |p| choose_token(p, &decoding, rng))?;
    let g = agents.guesser.trace(&gen.dialogue, world)?;
    let pmf = g.pmf();
    let guess = match decoding {
        Decoding::Greedy => argmax(&pmf),
        _ => sample_categorical(&pmf, rng)?,
    };
    let reward = guess_reward(world, guess)?;
    Ok(Rollout {
        record: EpisodeRecord {
            world_seed: world.seed,
            rollout_seed,
            dialogue: gen.dialogue,
            steps: gen.steps,
            guess,
            reward,
        },
        qgen: gen.trace,
        guesser: g.into_policy_trace(guess),
    })
}

/// Rebuilds the forward records of a recorded episode by forcing its tokens
/// and guess. Temperatures play no part.
pub fn replay_episode(
    agents: &Agents,
    vocab: &Vocab,
    world: &GameWorld,
    limits: EpisodeLimits,
    record: &EpisodeRecord,
) -> Result<Rollout> {
    let mut tokens = record.steps.iter();
    let gen = run_qgen(&agents.qgen, vocab, world, limits, |_| {
        tokens
            .next()
            .map(|s| (s.token, s.temperature))
            .ok_or_else(|| Error::Contract("recorded episode ran out of tokens".into()))
    })?;
    if gen.dialogue != record.dialogue || tokens.next().is_some() {
        return Err(Error::Contract("replay diverged from the recorded dialogue".into()));
    }
    let g = agents.guesser.trace(&gen.dialogue, world)?;
    Ok(Rollout { record: record.clone(), qgen: gen.trace, guesser: g.into_policy_trace(record.guess) })
}

fn check_reward(r: f64) -> Result<()> {
    if r == 0.0 || r == 1.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("reward {r} outside {{0, 1}}")))
    }
}

/// Adds one episode's contribution to both accumulators: `(r - b)` times the
/// question-generator eligibilities and `r` times the guess eligibility.
pub fn accumulate_episode(
    agents: &mut Agents,
    rollout: &Rollout,
    reward: f64,
    baseline: f64,
    credit: CreditMode,
) -> Result<()> {
    check_reward(reward)?;
    let mut advantage = reward - baseline;
    if credit == CreditMode::PerLength && !rollout.qgen.decisions.is_empty() {
        advantage /= rollout.qgen.decisions.len() as f64;
    }
    rollout.qgen.accumulate(&mut agents.qgen.store, advantage)?;
    rollout.guesser.accumulate(&mut agents.guesser.store, reward)
}

pub fn apply_updates(agents: &mut Agents, config: &TrainerConfig) -> Result<()> {
    if config.max_grad_norm > 0.0 {
        agents.qgen.store.clip_grad_norm(config.max_grad_norm);
        agents.guesser.store.clip_grad_norm(config.max_grad_norm);
    }
    agents.qgen.store.sgd_step(config.qgen_learning_rate)?;
    agents.guesser.store.sgd_step(config.guesser_learning_rate)
}

/// Single-episode update for the non-parallel variants.
pub fn reinforce_update(
    rollout: &Rollout,
    baseline: &BaselineTracker,
    agents: &mut Agents,
    config: &TrainerConfig,
) -> Result<()> {
    accumulate_episode(agents, rollout, rollout.record.reward, baseline.baseline(), config.credit)?;
    apply_updates(agents, config)
}

fn parallel_rewards(rollouts: &[Rollout], mode: ParallelReward) -> Vec<f64> {
    match mode {
        ParallelReward::PerRollout => rollouts.iter().map(|r| r.record.reward).collect(),
        ParallelReward::Shared => {
            let mean = rollouts.iter().map(|r| r.record.reward).sum::<f64>() / rollouts.len() as f64;
            vec![mean; rollouts.len()]
        }
    }
}

fn accumulate_parallel(agents: &mut Agents, rollouts: &[Rollout], baseline: f64, config: &TrainerConfig) -> Result<()> {
    if rollouts.len() != config.parallel_temperatures.len() {
        return Err(Error::Contract(format!(
            "{} rollouts for {} temperatures",
            rollouts.len(),
            config.parallel_temperatures.len()
        )));
    }
    for r in rollouts {
        check_reward(r.record.reward)?;
    }
    let rewards = parallel_rewards(rollouts, config.parallel_reward);
    for (rollout, reward) in rollouts.iter().zip(rewards) {
        let mut advantage = reward - baseline;
        if config.credit == CreditMode::PerLength && !rollout.qgen.decisions.is_empty() {
            advantage /= rollout.qgen.decisions.len() as f64;
        }
        rollout.qgen.accumulate(&mut agents.qgen.store, advantage)?;
        rollout.guesser.accumulate(&mut agents.guesser.store, reward)?;
    }
    Ok(())
}

/// Sums the contributions of one rollout per temperature (in temperature
/// order), then takes a single step.
pub fn parallel_update(
    rollouts: &[Rollout],
    baseline: &BaselineTracker,
    agents: &mut Agents,
    config: &TrainerConfig,
) -> Result<()> {
    accumulate_parallel(agents, rollouts, baseline.baseline(), config)?;
    apply_updates(agents, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub variant: Variant,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_dialogue_len: f64,
    pub mean_temperature: f64,
    pub min_temperature: f64,
    pub max_temperature: f64,
    pub baseline: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "epoch,variant,success_rate,mean_dialogue_len,mean_temperature,baseline,wall_ms";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.epoch,
            self.variant,
            self.success_rate,
            self.mean_dialogue_len,
            self.mean_temperature,
            self.baseline,
            self.wall_ms
        )
    }
}

#[derive(Clone, Debug)]
pub struct EpochOutput {
    pub metrics: EpochMetrics,
    pub records: Vec<EpisodeRecord>,
}

/// Everything mutable that one training run carries between epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub agents: Agents,
    pub stats: FrequencyStats,
    pub tracker: BaselineTracker,
    pub epochs_completed: usize,
}

fn stream_index(epoch: usize, item: usize) -> u64 {
    ((epoch as u64) << 32) | item as u64
}

/// One epoch: `worlds_per_epoch` sampled worlds in batches; the variant's
/// update is applied once per batch. World and sampling streams depend only
/// on `(seed, epoch, index)`, so a resumed run replays identically.
pub fn train_epoch(
    state: &mut TrainState,
    vocab: &Vocab,
    world_config: &WorldConfig,
    config: &TrainerConfig,
    seed: u64,
    timing: bool,
) -> Result<EpochOutput> {
    config.validate()?;
    let start = Instant::now();
    let epoch = state.epochs_completed;
    let limits = EpisodeLimits::from(config);
    let group = if config.variant == Variant::ParallelTpg { config.parallel_temperatures.len() } else { 1 };
    let mut records = Vec::with_capacity(config.worlds_per_epoch * group);
    let (mut dialogue_len, mut temp_sum, mut temp_n) = (0usize, 0.0, 0usize);
    let (mut temp_min, mut temp_max) = (f64::INFINITY, f64::NEG_INFINITY);

    state.agents.qgen.store.zero_grads();
    state.agents.guesser.store.zero_grads();
    for batch_start in (0..config.worlds_per_epoch).step_by(config.batch_size) {
        let batch_end = (batch_start + config.batch_size).min(config.worlds_per_epoch);
        for i in batch_start..batch_end {
            let world_seed = derive_seed(seed, "train-world", stream_index(epoch, i));
            let world = GameWorld::from_seed(world_seed, world_config)?;
            let mut rollouts = Vec::with_capacity(group);
            for (k, decoding) in config.decodings(&state.stats).into_iter().enumerate() {
                let rollout_seed = derive_seed(seed, "rollout", stream_index(epoch, i * group + k));
                let mut rng = SeededRng::new(rollout_seed);
                rollouts.push(rollout_episode(&state.agents, vocab, &world, limits, decoding, &mut rng, rollout_seed)?);
            }
            let b = state.tracker.baseline();
            if config.variant == Variant::ParallelTpg {
                accumulate_parallel(&mut state.agents, &rollouts, b, config)?;
            } else {
                let r = &rollouts[0];
                accumulate_episode(&mut state.agents, r, r.record.reward, b, config.credit)?;
            }
            for r in rollouts {
                state.tracker.update(r.record.reward);
                if config.variant == Variant::DynamicTpg {
                    state.stats.record_dialogue(&r.record.tokens())?;
                }
                dialogue_len += r.record.dialogue.len();
                for t in r.record.temperatures() {
                    temp_sum += t;
                    temp_n += 1;
                    temp_min = temp_min.min(t);
                    temp_max = temp_max.max(t);
                }
                records.push(r.record);
            }
        }
        apply_updates(&mut state.agents, config).map_err(|e| match e {
            Error::NonFinite(block) => Error::NonFinite(format!("{block} (epoch {epoch}, batch at world {batch_start})")),
            other => other,
        })?;
    }
    state.epochs_completed += 1;
    let n = records.len().max(1) as f64;
    let metrics = EpochMetrics {
        epoch,
        variant: config.variant,
        episodes: records.len(),
        success_rate: records.iter().map(|r| r.reward).sum::<f64>() / n,
        mean_dialogue_len: dialogue_len as f64 / n,
        mean_temperature: if temp_n > 0 { temp_sum / temp_n as f64 } else { 0.0 },
        min_temperature: temp_min,
        max_temperature: temp_max,
        baseline: state.tracker.baseline(),
        wall_ms: if timing { start.elapsed().as_millis() as u64 } else { 0 },
    };
    Ok(EpochOutput { metrics, records })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_dialogue_len: f64,
}

/// Greedy play on `episodes` held-out worlds.
pub fn evaluate(
    agents: &Agents,
    vocab: &Vocab,
    world_config: &WorldConfig,
    limits: EpisodeLimits,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut rng = SeededRng::new(0);
    let (mut wins, mut len) = (0.0, 0usize);
    for i in 0..episodes {
        let world = GameWorld::from_seed(derive_seed(seed, "eval-world", i as u64), world_config)?;
        let r = rollout_episode(agents, vocab, &world, limits, Decoding::Greedy, &mut rng, 0)?;
        wins += r.record.reward;
        len += r.record.dialogue.len();
    }
    Ok(EvalReport {
        episodes,
        success_rate: wins / episodes as f64,
        mean_dialogue_len: len as f64 / episodes as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ModelConfig;

    fn setup() -> (Vocab, WorldConfig, Agents) {
        let vocab = Vocab::new(5);
        let wc = WorldConfig::default();
        let agents = Agents::new(&vocab, &wc, &ModelConfig::default(), &mut SeededRng::new(4));
        (vocab, wc, agents)
    }

    fn limits() -> EpisodeLimits {
        EpisodeLimits { max_questions: MAX_QUESTIONS, max_words: MAX_WORDS }
    }

    #[test]
    fn baseline_running_mean() {
        let mut t = BaselineTracker::default();
        assert_eq!(t.baseline(), 0.0);
        assert_eq!(baseline_update(&mut t, 1.0), 1.0);
        baseline_update(&mut t, 0.0);
        assert!((baseline_update(&mut t, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("ppo".parse::<Variant>().is_err());
    }

    #[test]
    fn episode_limits_hold() {
        let (vocab, wc, agents) = setup();
        for i in 0..50 {
            let world = GameWorld::from_seed(i, &wc).unwrap();
            let mut rng = SeededRng::new(i);
            let r = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Fixed(1.0), &mut rng, i).unwrap();
            assert!(r.record.dialogue.len() <= MAX_QUESTIONS);
            for qa in &r.record.dialogue {
                assert!(qa.question.len() <= MAX_WORDS);
                assert_eq!(qa.question.last(), Some(&Vocab::EOQ));
                assert_eq!(qa.question.iter().filter(|t| **t == Vocab::EOQ).count(), 1);
                assert_eq!(qa.answer, oracle_answer(&vocab, &world, &qa.question));
            }
            assert!(r.record.temperatures().all(|t| t == 1.0));
            assert_eq!(r.qgen.decisions.len(), r.record.steps.len());
        }
    }

    #[test]
    fn greedy_is_deterministic_and_rng_free() {
        let (vocab, wc, agents) = setup();
        let world = GameWorld::from_seed(3, &wc).unwrap();
        let mut rng = SeededRng::new(1);
        let a = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Greedy, &mut rng, 0).unwrap();
        let b = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Greedy, &mut rng, 0).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(rng.next_u64(), SeededRng::new(1).next_u64());
        assert!(a.record.steps.iter().all(|s| s.temperature.is_none()));
    }

    #[test]
    fn zero_advantage_leaves_qgen_unchanged() {
        let (vocab, wc, mut agents) = setup();
        let world = GameWorld::from_seed(5, &wc).unwrap();
        let r = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Fixed(1.0), &mut SeededRng::new(2), 0)
            .unwrap();
        let before = agents.qgen.store.values();
        let tracker = BaselineTracker { episodes: 1, reward_sum: r.record.reward };
        reinforce_update(&r, &tracker, &mut agents, &TrainerConfig::default()).unwrap();
        assert_eq!(agents.qgen.store.values(), before);
    }

    #[test]
    fn failed_guess_leaves_guesser_unchanged() {
        let (vocab, wc, mut agents) = setup();
        let mut seed = 0;
        let r = loop {
            let world = GameWorld::from_seed(seed, &wc).unwrap();
            let r = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Fixed(1.0), &mut SeededRng::new(seed), 0)
                .unwrap();
            if r.record.reward == 0.0 {
                break r;
            }
            seed += 1;
        };
        let before = agents.guesser.store.values();
        reinforce_update(&r, &BaselineTracker::default(), &mut agents, &TrainerConfig::default()).unwrap();
        assert_eq!(agents.guesser.store.values(), before);
    }

    #[test]
    fn bad_reward_is_contract_error() {
        let (vocab, wc, mut agents) = setup();
        let world = GameWorld::from_seed(5, &wc).unwrap();
        let mut r = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Fixed(1.0), &mut SeededRng::new(2), 0)
            .unwrap();
        r.record.reward = 0.5;
        let err = reinforce_update(&r, &BaselineTracker::default(), &mut agents, &TrainerConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn parallel_requires_one_rollout_per_temperature() {
        let (vocab, wc, mut agents) = setup();
        let world = GameWorld::from_seed(5, &wc).unwrap();
        let r = rollout_episode(&agents, &vocab, &world, limits(), Decoding::Fixed(1.0), &mut SeededRng::new(2), 0)
            .unwrap();
        let cfg = TrainerConfig { variant: Variant::ParallelTpg, ..Default::default() };
        let err = parallel_update(&[r], &BaselineTracker::default(), &mut agents, &cfg);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig { qgen_learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig { parallel_temperatures: vec![1.0, -1.0], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig { max_words: 13, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
