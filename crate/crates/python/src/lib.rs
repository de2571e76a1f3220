//! Python bindings: `import tpg`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use tpg_core::audit::{run_audit, Fault};
use tpg_core::game::{expert_episode, Object};
use tpg_core::pipeline;
use tpg_core::{Error, RunConfig, TemperatureBounds, Variant};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Index { .. } => PyIndexError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn config(
    config: Option<PathBuf>,
    seed: Option<u64>,
    variant: Option<&str>,
    output_dir: Option<PathBuf>,
) -> PyResult<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(py_err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg.trainer.variant = v.parse::<Variant>().map_err(py_err)?;
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Tempered pmf `p^(1/tau)` renormalized.
#[pyfunction]
fn temper(probs: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    tpg_core::temper(&probs, tau).map_err(py_err)
}

/// One draw from the tempered pmf.
#[pyfunction]
#[pyo3(signature = (probs, tau, seed))]
fn sample(probs: Vec<f64>, tau: f64, seed: u64) -> PyResult<usize> {
    let dist = tpg_core::TemperedDistribution::new(probs, tau).map_err(py_err)?;
    dist.sample(&mut tpg_core::SeededRng::new(seed)).map_err(py_err)
}

#[pyfunction]
fn greedy(probs: Vec<f64>) -> PyResult<usize> {
    tpg_core::greedy(&probs).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (stats, token, tau_min=0.5, tau_max=1.5, tfidf_min=0.0, tfidf_max=8.0))]
fn dynamic_temperature(
    stats: &FrequencyStats,
    token: usize,
    tau_min: f64,
    tau_max: f64,
    tfidf_min: f64,
    tfidf_max: f64,
) -> PyResult<f64> {
    let bounds = TemperatureBounds { tau_min, tau_max, tfidf_min, tfidf_max };
    bounds.validate().map_err(py_err)?;
    Ok(tpg_core::dynamic_temperature(&stats.0, token, &bounds))
}

#[pyclass(from_py_object)]
#[derive(Clone)]
struct FrequencyStats(tpg_core::FrequencyStats);

#[pymethods]
impl FrequencyStats {
    #[new]
    fn new(vocab_size: usize) -> Self {
        Self(tpg_core::FrequencyStats::new(vocab_size))
    }

    fn record_dialogue(&mut self, tokens: Vec<usize>) -> PyResult<()> {
        self.0.record_dialogue(&tokens).map_err(py_err)
    }

    fn tfidf(&self, token: usize) -> f64 {
        self.0.tfidf(token)
    }

    fn count(&self, token: usize) -> u64 {
        self.0.count(token)
    }

    #[getter]
    fn dialogues(&self) -> u64 {
        self.0.dialogues()
    }
}

#[pyclass(from_py_object)]
#[derive(Clone)]
struct Vocab(tpg_core::Vocab);

#[pymethods]
impl Vocab {
    #[new]
    #[pyo3(signature = (num_categories=5))]
    fn new(num_categories: usize) -> Self {
        Self(tpg_core::Vocab::new(num_categories))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn word(&self, id: usize) -> PyResult<String> {
        if id >= self.0.len() {
            return Err(PyIndexError::new_err(format!("token {id} out of range")));
        }
        Ok(self.0.word(id).to_string())
    }

    fn id(&self, word: &str) -> Option<usize> {
        self.0.id(word)
    }

    fn encode(&self, text: &str) -> PyResult<Vec<usize>> {
        text.split_whitespace()
            .map(|w| self.0.id(w).ok_or_else(|| PyValueError::new_err(format!("unknown word `{w}`"))))
            .collect()
    }

    fn render(&self, tokens: Vec<usize>) -> String {
        self.0.render(&tokens)
    }
}

/// A game world: objects as `(category, column, row)` triples plus the target.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct World(tpg_core::GameWorld);

#[pymethods]
impl World {
    #[new]
    fn new(objects: Vec<(usize, usize, usize)>, target: usize) -> PyResult<Self> {
        if target >= objects.len() {
            return Err(PyIndexError::new_err("target index out of range"));
        }
        if objects.iter().any(|o| o.1 > 2 || o.2 > 2) {
            return Err(PyValueError::new_err("column and row must be 0, 1 or 2"));
        }
        let objects = objects.into_iter().map(|(category, column, row)| Object { category, column, row }).collect();
        Ok(Self(tpg_core::GameWorld { objects, target, seed: 0 }))
    }

    #[staticmethod]
    #[pyo3(signature = (seed, num_categories=5, min_objects=8, max_objects=8))]
    fn from_seed(seed: u64, num_categories: usize, min_objects: usize, max_objects: usize) -> PyResult<Self> {
        let cfg = tpg_core::WorldConfig { num_categories, min_objects, max_objects };
        tpg_core::GameWorld::from_seed(seed, &cfg).map(Self).map_err(py_err)
    }

    #[getter]
    fn objects(&self) -> Vec<(usize, usize, usize)> {
        self.0.objects.iter().map(|o| (o.category, o.column, o.row)).collect()
    }

    #[getter]
    fn target(&self) -> usize {
        self.0.target
    }

    /// `"yes"`, `"no"` or `"n/a"` for a question given as tokens.
    fn answer(&self, vocab: &Vocab, question: Vec<usize>) -> String {
        tpg_core::oracle_answer(&vocab.0, &self.0, &question).to_string()
    }

    /// The scripted expert's dialogue as `(question text, answer)` pairs.
    fn expert_dialogue(&self, vocab: &Vocab) -> Vec<(String, String)> {
        expert_episode(&vocab.0, self.0.clone())
            .dialogue
            .iter()
            .map(|qa| (vocab.0.render(&qa.question), qa.answer.to_string()))
            .collect()
    }
}

/// Question generator and guesser, freshly initialized or from a checkpoint.
#[pyclass]
struct Agents {
    agents: tpg_core::Agents,
    cfg: RunConfig,
}

fn dialogue_of(vocab: &tpg_core::Vocab, world: &tpg_core::GameWorld, questions: Vec<Vec<usize>>) -> Vec<tpg_core::QaPair> {
    questions
        .into_iter()
        .map(|q| tpg_core::QaPair { answer: tpg_core::oracle_answer(vocab, world, &q), question: q })
        .collect()
}

#[pymethods]
impl Agents {
    #[staticmethod]
    #[pyo3(signature = (seed=1, config=None))]
    fn init(seed: u64, config: Option<PathBuf>) -> PyResult<Self> {
        let cfg = self::config(config, Some(seed), None, None)?;
        Ok(Self { agents: pipeline::init_agents(&cfg), cfg })
    }

    #[staticmethod]
    #[pyo3(signature = (checkpoint, config=None))]
    fn load(checkpoint: PathBuf, config: Option<PathBuf>) -> PyResult<Self> {
        let cfg = self::config(config, None, None, None)?;
        let state = pipeline::load_state(&cfg, &checkpoint).map_err(py_err)?;
        Ok(Self { agents: state.agents, cfg })
    }

    /// Guesser pmf over the world's objects after the given questions, each
    /// answered by the oracle.
    fn guess_distribution(&self, world: &World, questions: Vec<Vec<usize>>) -> PyResult<Vec<f64>> {
        let d = dialogue_of(&pipeline::vocab_for(&self.cfg), &world.0, questions);
        tpg_core::guesser_forward(&self.agents.guesser, &d, &world.0).map_err(py_err)
    }

    fn encode_history(&self, world: &World, questions: Vec<Vec<usize>>) -> PyResult<Vec<f64>> {
        let d = dialogue_of(&pipeline::vocab_for(&self.cfg), &world.0, questions);
        tpg_core::encode_history(&self.agents.qgen, &d, &world.0).map_err(py_err)
    }

    /// Plays one greedy game; returns `(questions, guess, reward)`.
    fn play(&self, world: &World) -> PyResult<(Vec<(String, String)>, usize, f64)> {
        let vocab = pipeline::vocab_for(&self.cfg);
        let limits = tpg_core::trainer::EpisodeLimits::from(&self.cfg.trainer);
        let r = tpg_core::rollout_episode(
            &self.agents,
            &vocab,
            &world.0,
            limits,
            tpg_core::trainer::Decoding::Greedy,
            &mut tpg_core::SeededRng::new(0),
            0,
        )
        .map_err(py_err)?;
        let qs = r.record.dialogue.iter().map(|qa| (vocab.render(&qa.question), qa.answer.to_string())).collect();
        Ok((qs, r.record.guess, r.record.reward))
    }

    /// Greedy success rate on held-out worlds.
    #[pyo3(signature = (episodes=1000, seed=None))]
    fn evaluate(&self, episodes: usize, seed: Option<u64>) -> PyResult<f64> {
        let r = tpg_core::evaluate(
            &self.agents,
            &pipeline::vocab_for(&self.cfg),
            &self.cfg.world,
            tpg_core::trainer::EpisodeLimits::from(&self.cfg.trainer),
            episodes,
            seed.unwrap_or(self.cfg.seed),
        )
        .map_err(py_err)?;
        Ok(r.success_rate)
    }
}

#[pyfunction]
#[pyo3(signature = (config=None, seed=None, output_dir=None))]
fn pretrain(py: Python<'_>, config: Option<PathBuf>, seed: Option<u64>, output_dir: Option<PathBuf>) -> PyResult<(usize, Option<f64>, Option<f64>)> {
    let cfg = self::config(config, seed, None, output_dir)?;
    let s = py.detach(|| pipeline::cmd_pretrain(&cfg)).map_err(py_err)?;
    Ok((s.steps, s.final_qgen_nll, s.final_guesser_nll))
}

/// Runs RL training; returns the per-epoch sampled success rates.
#[pyfunction]
#[pyo3(signature = (checkpoint, config=None, seed=None, variant=None, output_dir=None))]
fn train(
    py: Python<'_>,
    checkpoint: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    variant: Option<&str>,
    output_dir: Option<PathBuf>,
) -> PyResult<Vec<f64>> {
    let cfg = self::config(config, seed, variant, output_dir)?;
    let rows = py.detach(|| pipeline::cmd_train(&cfg, &checkpoint)).map_err(py_err)?;
    Ok(rows.iter().map(|m| m.success_rate).collect())
}

#[pyfunction]
#[pyo3(signature = (checkpoint, config=None, seed=None))]
fn evaluate(py: Python<'_>, checkpoint: PathBuf, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<f64> {
    let cfg = self::config(config, seed, None, None)?;
    let r = py.detach(|| pipeline::cmd_evaluate(&cfg, &checkpoint)).map_err(py_err)?;
    Ok(r.success_rate)
}

/// Runs the property audit; returns `(passed, report text)`.
#[pyfunction]
#[pyo3(signature = (config=None, inject_fault=false))]
fn audit(py: Python<'_>, config: Option<PathBuf>, inject_fault: bool) -> PyResult<(bool, String)> {
    let cfg = self::config(config, None, None, None)?;
    let fault = if inject_fault { Fault::QGenGradient } else { Fault::None };
    let report = py.detach(|| run_audit(&cfg, fault));
    Ok((report.passed(), report.render()))
}

#[pymodule]
fn tpg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(temper, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(greedy, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_class::<FrequencyStats>()?;
    m.add_class::<Vocab>()?;
    m.add_class::<World>()?;
    m.add_class::<Agents>()?;
    Ok(())
}
