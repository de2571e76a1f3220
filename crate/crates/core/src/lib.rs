//! Tempered policy gradients for a cooperative question-and-guess game.
//!
//! A question generator and a guesser are trained with REINFORCE. Tokens can
//! be sampled from a tempered copy of the policy (fixed, several fixed, or a
//! per-step temperature driven by word frequencies) while the eligibility
//! always uses the untempered distribution.

pub mod agents;
pub mod audit;
pub mod bandit;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod game;
pub mod nn;
pub mod pipeline;
pub mod sampling;
pub mod tfidf;
pub mod trainer;

pub use agents::{encode_history, guesser_forward, qgen_step, Agents, GuesserNet, ModelConfig, QGenPolicy};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use game::{new_game, oracle_answer, Answer, GameWorld, QaPair, Vocab, WorldConfig};
pub use nn::{finite_diff_check, forward_softmax, EligibilityGradient, ParamStore};
pub use sampling::{greedy, sample_categorical, temper, SeededRng, TemperedDistribution};
pub use tfidf::{dynamic_temperature, FrequencyStats, TemperatureBounds};
pub use trainer::{
    baseline_update, evaluate, parallel_update, reinforce_update, rollout_episode, train_epoch, TrainerConfig, Variant,
};
