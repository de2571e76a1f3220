//! Bernoulli bandit with a linear-softmax policy, used to audit the
//! score-function gradient estimator against its closed form.

use crate::nn::{ParamId, ParamStore, Tape};
use crate::sampling::{sample_categorical, SeededRng};
use crate::trainer::BaselineTracker;

#[derive(Clone, Debug)]
pub struct LinearSoftmaxBandit {
    /// Success probability of each arm.
    pub means: Vec<f64>,
    /// Fixed context fed to the policy.
    pub features: Vec<f64>,
    pub store: ParamStore,
    weights: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineKind {
    Zero,
    Constant(f64),
    RunningAverage,
}

#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Sum over components of the per-sample variance.
    pub total_variance: f64,
}

impl LinearSoftmaxBandit {
    pub fn new(means: Vec<f64>, features: Vec<f64>, rng: &mut SeededRng) -> Self {
        let mut store = ParamStore::new();
        let weights = store.add_uniform("bandit.w", means.len(), features.len(), 0.5, rng);
        Self { means, features, store, weights }
    }

    /// Default audit instance: five arms, three features.
    pub fn standard(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        Self::new(vec![0.1, 0.3, 0.5, 0.7, 0.9], vec![1.0, -0.5, 0.25], &mut rng)
    }

    pub fn arms(&self) -> usize {
        self.means.len()
    }

    fn record(&self) -> (Tape, crate::nn::Var) {
        let mut tape = Tape::new();
        let x = tape.input(self.features.clone());
        let z = tape.affine(&self.store, self.weights, None, x);
        (tape, z)
    }

    pub fn policy(&self) -> Vec<f64> {
        let (tape, z) = self.record();
        crate::nn::forward_softmax(tape.value(z)).expect("finite logits")
    }

    /// Closed form of `dE[r]/dW`: `p_j (mu_j - sum_k p_k mu_k) x`, row-major.
    pub fn exact_gradient(&self) -> Vec<f64> {
        let p = self.policy();
        let expected: f64 = p.iter().zip(&self.means).map(|(p, m)| p * m).sum();
        let mut g = Vec::with_capacity(p.len() * self.features.len());
        for (pj, mj) in p.iter().zip(&self.means) {
            for x in &self.features {
                g.push(pj * (mj - expected) * x);
            }
        }
        g
    }

    /// Monte Carlo mean of `(r - b) d ln f(a) / dW` over `samples` pulls,
    /// using the framework's tape and accumulator for each sample.
    pub fn estimate(&self, samples: usize, baseline: BaselineKind, rng: &mut SeededRng) -> GradientEstimate {
        let (tape, z) = self.record();
        let probs = self.policy();
        let mut store = self.store.clone();
        let dim = store.num_params();
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut tracker = BaselineTracker::default();
        for _ in 0..samples {
            let a = sample_categorical(&probs, rng).expect("valid policy");
            let r = if rng.uniform() < self.means[a] { 1.0 } else { 0.0 };
            let b = match baseline {
                BaselineKind::Zero => 0.0,
                BaselineKind::Constant(b) => b,
                BaselineKind::RunningAverage => tracker.baseline(),
            };
            tracker.update(r);
            store.zero_grads();
            crate::nn::accumulate_log_prob_grad(&mut store, &tape, z, a, r - b).expect("valid action");
            for (i, g) in store.block(self.weights).grad.iter().enumerate() {
                sum[i] += g;
                sum_sq[i] += g * g;
            }
        }
        let n = samples as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0) * n / (n - 1.0))
            .collect();
        GradientEstimate {
            std_err: var.iter().map(|v| (v / n).sqrt()).collect(),
            total_variance: var.iter().sum(),
            mean,
        }
    }
}

impl GradientEstimate {
    /// Largest `|estimate - exact| / std_err` over components.
    pub fn max_z_score(&self, exact: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(exact)
            .zip(&self.std_err)
            .map(|((m, e), s)| if *s > 0.0 { (m - e).abs() / s } else if m == e { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}
