//! The pretrain -> train -> evaluate pipeline and the files it writes.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::agents::{pretrain_nll_step, Agents, PolicyTrace, Pretrain};
use crate::nn::Adam;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{io_at, Error, Result};
use crate::game::{append_jsonl, expert_episode, ExpertEpisode, GameWorld, Vocab};
use crate::sampling::{derive_seed, SeededRng};
use crate::tfidf::FrequencyStats;
use crate::trainer::{evaluate, train_epoch, BaselineTracker, EpisodeLimits, EpochMetrics, EvalReport, TrainState, METRICS_HEADER};

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt.json";
pub const TRAIN_CHECKPOINT: &str = "train.ckpt.json";
pub const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub const METRICS: &str = "metrics.csv";
pub const EPISODES: &str = "episodes.jsonl";
pub const VOCAB: &str = "vocab.tsv";

pub fn vocab_for(cfg: &RunConfig) -> Vocab {
    Vocab::new(cfg.world.num_categories)
}

/// Freshly initialized agents from the run's `init` stream.
pub fn init_agents(cfg: &RunConfig) -> Agents {
    let mut rng = SeededRng::derive(cfg.seed, "init", 0);
    Agents::new(&vocab_for(cfg), &cfg.world, &cfg.model, &mut rng)
}

pub fn fresh_state(cfg: &RunConfig, agents: Agents) -> TrainState {
    TrainState {
        agents,
        stats: FrequencyStats::with_strategy(vocab_for(cfg).len(), cfg.trainer.tfidf),
        tracker: BaselineTracker::default(),
        epochs_completed: 0,
    }
}

pub fn expert_corpus(cfg: &RunConfig) -> Result<Vec<ExpertEpisode>> {
    let vocab = vocab_for(cfg);
    (0..cfg.pretrain.episodes)
        .map(|i| {
            let world = GameWorld::from_seed(derive_seed(cfg.seed, "pretrain-world", i as u64), &cfg.world)?;
            Ok(expert_episode(&vocab, world))
        })
        .collect()
}

/// Mean per-decision NLL of `model` on `episodes`.
pub fn mean_nll<M: Pretrain>(model: &M, vocab: &Vocab, episodes: &[ExpertEpisode]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        let t: PolicyTrace = model.expert_trace(vocab, ep)?;
        total -= t.log_prob()?;
        count += t.decisions.len();
    }
    Ok(total / count.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRow {
    pub step: usize,
    pub qgen_nll: f64,
    pub guesser_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainSummary {
    pub episodes: usize,
    pub steps: usize,
    pub initial_qgen_nll: Option<f64>,
    pub final_qgen_nll: Option<f64>,
    pub initial_guesser_nll: Option<f64>,
    pub final_guesser_nll: Option<f64>,
}

/// Behavior cloning of the scripted expert for both agents.
pub fn pretrain(cfg: &RunConfig) -> Result<(Agents, PretrainSummary, Vec<LossRow>)> {
    cfg.validate()?;
    let vocab = vocab_for(cfg);
    let mut agents = init_agents(cfg);
    let corpus = expert_corpus(cfg)?;
    let mut rows = Vec::new();
    let mut summary = PretrainSummary {
        episodes: corpus.len(),
        steps: 0,
        initial_qgen_nll: None,
        final_qgen_nll: None,
        initial_guesser_nll: None,
        final_guesser_nll: None,
    };
    if corpus.is_empty() {
        return Ok((agents, summary, rows));
    }
    summary.initial_qgen_nll = Some(mean_nll(&agents.qgen, &vocab, &corpus)?);
    summary.initial_guesser_nll = Some(mean_nll(&agents.guesser, &vocab, &corpus)?);
    let mut qgen_opt = Adam::new(&agents.qgen.store, cfg.pretrain.qgen_learning_rate);
    let mut guesser_opt = Adam::new(&agents.guesser.store, cfg.pretrain.guesser_learning_rate);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.pretrain.epochs {
        let mut rng = SeededRng::derive(cfg.seed, "pretrain-shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for chunk in order.chunks(cfg.pretrain.batch_size) {
            let batch: Vec<ExpertEpisode> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            let q = pretrain_nll_step(&mut agents.qgen, &vocab, &batch, &mut qgen_opt)?;
            let g = pretrain_nll_step(&mut agents.guesser, &vocab, &batch, &mut guesser_opt)?;
            rows.push(LossRow { step: summary.steps, qgen_nll: q, guesser_nll: g });
            summary.steps += 1;
        }
    }
    summary.final_qgen_nll = Some(mean_nll(&agents.qgen, &vocab, &corpus)?);
    summary.final_guesser_nll = Some(mean_nll(&agents.guesser, &vocab, &corpus)?);
    Ok((agents, summary, rows))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    Ok(())
}

/// Writes the pretrained checkpoint, the loss curve and the vocabulary file.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainSummary> {
    let (agents, summary, rows) = pretrain(cfg)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    vocab_for(cfg).write_to(BufWriter::new(File::create(dir.join(VOCAB))?))?;
    let mut loss = BufWriter::new(File::create(dir.join(PRETRAIN_LOSS))?);
    writeln!(loss, "step,qgen_nll,guesser_nll")?;
    for r in &rows {
        writeln!(loss, "{},{:.8},{:.8}", r.step, r.qgen_nll, r.guesser_nll)?;
    }
    loss.flush()?;
    Checkpoint::capture(&fresh_state(cfg, agents)).save(&dir.join(PRETRAIN_CHECKPOINT))?;
    Ok(summary)
}

/// Restores a training state from a checkpoint, validating it against `cfg`.
pub fn load_state(cfg: &RunConfig, checkpoint: &Path) -> Result<TrainState> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut state = fresh_state(cfg, init_agents(cfg));
    ck.restore_into(&mut state.agents)?;
    if ck.stats.vocab_size() != state.stats.vocab_size() {
        return Err(Error::Compatibility(format!(
            "word statistics cover {} tokens, vocabulary has {}",
            ck.stats.vocab_size(),
            state.stats.vocab_size()
        )));
    }
    state.stats = ck.stats;
    state.tracker = ck.baseline;
    state.epochs_completed = ck.epochs_completed;
    Ok(state)
}

/// Runs RL epochs from `state` up to `cfg.trainer.epochs`, calling `on_epoch`
/// after each one.
pub fn train_run<F>(cfg: &RunConfig, state: &mut TrainState, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&TrainState, &crate::trainer::EpochOutput) -> Result<()>,
{
    cfg.validate()?;
    let vocab = vocab_for(cfg);
    let mut all = Vec::new();
    while state.epochs_completed < cfg.trainer.epochs {
        let out = train_epoch(state, &vocab, &cfg.world, &cfg.trainer, cfg.seed, cfg.timing)?;
        on_epoch(state, &out)?;
        all.push(out.metrics);
    }
    Ok(all)
}

/// Trains from `checkpoint`, appending one metrics row per epoch and
/// rewriting the training checkpoint after each epoch. A checkpoint with
/// completed epochs resumes where it stopped.
pub fn cmd_train(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<EpochMetrics>> {
    let mut state = load_state(cfg, checkpoint)?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    let metrics_path = dir.join(METRICS);
    let fresh = state.epochs_completed == 0 || !metrics_path.exists();
    let mut metrics = if fresh {
        let mut f = File::create(&metrics_path).map_err(io_at(&metrics_path))?;
        writeln!(f, "{METRICS_HEADER}")?;
        f
    } else {
        OpenOptions::new().append(true).open(&metrics_path).map_err(io_at(&metrics_path))?
    };
    let episodes_path = dir.join(EPISODES);
    if cfg.log_episodes && fresh {
        File::create(&episodes_path)?;
    }
    let ckpt_path: PathBuf = dir.join(TRAIN_CHECKPOINT);
    train_run(cfg, &mut state, |state, out| {
        writeln!(metrics, "{}", out.metrics.csv_row())?;
        metrics.flush()?;
        if cfg.log_episodes {
            let f = OpenOptions::new().append(true).create(true).open(&episodes_path)?;
            append_jsonl(BufWriter::new(f), &out.records)?;
        }
        Checkpoint::capture(state).save(&ckpt_path)
    })
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let state = load_state(cfg, checkpoint)?;
    evaluate(
        &state.agents,
        &vocab_for(cfg),
        &cfg.world,
        EpisodeLimits::from(&cfg.trainer),
        cfg.eval.episodes,
        cfg.seed,
    )
}
