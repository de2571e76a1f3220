//! Property suites run by `tpg audit`: finite-difference gradient checks,
//! estimator unbiasedness on a bandit, and sampler frequencies.

use std::fmt::Write as _;

use crate::agents::{GuesserNet, PolicyTrace, QGenPolicy};
use crate::bandit::{BaselineKind, LinearSoftmaxBandit};
use crate::config::RunConfig;
use crate::error::Result;
use crate::game::{expert_episode, GameWorld, QaPair, Vocab};
use crate::nn::{finite_diff_check, ParamStore, Tape};
use crate::sampling::{derive_seed, greedy, sample_categorical, temper, SeededRng};

pub const GRADIENT_DRAWS: usize = 100;
pub const PROBES_PER_DRAW: usize = 40;
pub const FD_EPSILON: f64 = 1e-5;
pub const FEEDFORWARD_TOLERANCE: f64 = 1e-4;
pub const RECURRENT_TOLERANCE: f64 = 1e-3;
pub const BANDIT_SAMPLES: usize = 200_000;
pub const SAMPLER_DRAWS: usize = 100_000;

/// Deliberate corruption applied during the audit, for exercising failure paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Scales the analytic question-generator gradient by 1.5.
    QGenGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub checks: Vec<CheckResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(out, "{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let failed = self.failed().len();
        let _ = writeln!(out, "{} checks, {} failed", self.checks.len(), failed);
        out
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name: name.to_string(), passed, detail });
    }
}

/// Redraws every parameter uniformly from `[-scale, scale]`.
pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut SeededRng) {
    for i in 0..store.num_params() {
        store.set_flat(i, scale * (2.0 * rng.uniform() - 1.0));
    }
}

fn corrupt(store: &mut ParamStore) {
    let names: Vec<String> = store.blocks().iter().map(|b| b.name.clone()).collect();
    for name in names {
        let id = store.id(&name).expect("known block");
        for g in &mut store.block_mut(id).grad {
            *g *= 1.5;
        }
    }
}

/// Worst relative error over `draws` parameter draws of `ln f` for a linear
/// softmax policy.
pub fn check_linear_softmax(seed: u64, draws: usize) -> Result<f64> {
    let mut worst = 0.0_f64;
    for d in 0..draws {
        let mut rng = SeededRng::derive(seed, "audit-linear", d as u64);
        let mut bandit = LinearSoftmaxBandit::standard(rng.next_u64());
        randomize(&mut bandit.store, 1.0, &mut rng);
        let action = rng.below(bandit.arms());
        let features = bandit.features.clone();
        let w = bandit.store.id("bandit.w").expect("bandit weights");
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.input(features.clone());
            let z = tape.affine(s, w, None, x);
            crate::nn::floored_ln(crate::nn::forward_softmax(tape.value(z)).expect("finite")[action])
        };
        let mut tape = Tape::new();
        let x = tape.input(features.clone());
        let z = tape.affine(&bandit.store, w, None, x);
        bandit.store.zero_grads();
        crate::nn::accumulate_log_prob_grad(&mut bandit.store, &tape, z, action, 1.0)?;
        worst = worst.max(finite_diff_check(&bandit.store, eval, FD_EPSILON, PROBES_PER_DRAW)?);
    }
    Ok(worst)
}

fn audit_world(cfg: &RunConfig, label: &str, d: usize) -> Result<(GameWorld, Vec<QaPair>)> {
    let vocab = Vocab::new(cfg.world.num_categories);
    let world = GameWorld::from_seed(derive_seed(cfg.seed, label, d as u64), &cfg.world)?;
    let dialogue = expert_episode(&vocab, world.clone()).dialogue;
    Ok((world, dialogue))
}

fn qgen_unroll(policy: &QGenPolicy, world: &GameWorld, history: &[QaPair], tokens: &[usize]) -> PolicyTrace {
    let mut tape = Tape::new();
    let mut enc = policy.begin(&mut tape, world);
    for qa in history {
        policy.extend(&mut tape, &mut enc, qa);
    }
    let mut h = policy.decoder_start(&mut tape, &enc);
    let mut prev = Vocab::SOS;
    let mut decisions = Vec::new();
    for &t in tokens {
        let (logits, next) = policy.step_on(&mut tape, h, prev);
        decisions.push((logits, t));
        h = next;
        prev = t;
    }
    PolicyTrace { tape, decisions }
}

/// Three decoder steps after a one-question history, through the shared
/// embeddings and both recurrent cells.
pub fn check_qgen_unroll(cfg: &RunConfig, draws: usize, fault: Fault) -> Result<f64> {
    let vocab = Vocab::new(cfg.world.num_categories);
    let mut worst = 0.0_f64;
    for d in 0..draws {
        let mut rng = SeededRng::derive(cfg.seed, "audit-qgen", d as u64);
        let mut policy = QGenPolicy::new(vocab.len(), cfg.world.num_categories, &cfg.model, &mut rng);
        randomize(&mut policy.store, 0.5, &mut rng);
        let (world, dialogue) = audit_world(cfg, "audit-qgen-world", d)?;
        let history: Vec<QaPair> = dialogue.iter().take(1).cloned().collect();
        let tokens: Vec<usize> = (0..3).map(|_| rng.below(vocab.len())).collect();
        let trace = qgen_unroll(&policy, &world, &history, &tokens);
        policy.store.zero_grads();
        trace.accumulate(&mut policy.store, 1.0)?;
        if fault == Fault::QGenGradient {
            corrupt(&mut policy.store);
        }
        let mut probe = policy.clone();
        let eval = |s: &ParamStore| {
            probe.store.clone_from(s);
            qgen_unroll(&probe, &world, &history, &tokens).log_prob().unwrap_or(f64::NAN)
        };
        worst = worst.max(finite_diff_check(&policy.store, eval, FD_EPSILON, PROBES_PER_DRAW)?);
    }
    Ok(worst)
}

/// Two-layer tanh network with a softmax head.
pub fn check_mlp_softmax(seed: u64, draws: usize) -> Result<f64> {
    let mut worst = 0.0_f64;
    for d in 0..draws {
        let mut rng = SeededRng::derive(seed, "audit-mlp", d as u64);
        let mut store = ParamStore::new();
        let w1 = store.add_uniform("mlp.w1", 12, 6, 0.5, &mut rng);
        let b1 = store.add_uniform("mlp.b1", 12, 1, 0.5, &mut rng);
        let w2 = store.add_uniform("mlp.w2", 7, 12, 0.5, &mut rng);
        let b2 = store.add_uniform("mlp.b2", 7, 1, 0.5, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let action = rng.below(7);
        let record = |s: &ParamStore| {
            let mut tape = Tape::new();
            let input = tape.input(x.clone());
            let pre = tape.affine(s, w1, Some(b1), input);
            let h = tape.tanh(pre);
            let z = tape.affine(s, w2, Some(b2), h);
            PolicyTrace { tape, decisions: vec![(z, action)] }
        };
        record(&store).accumulate(&mut store, 1.0)?;
        worst = worst.max(finite_diff_check(&store, |s| record(s).log_prob().unwrap_or(f64::NAN), FD_EPSILON, PROBES_PER_DRAW)?);
    }
    Ok(worst)
}

/// Guesser log-probability of one object through the fact encoder and both
/// attention hops.
pub fn check_guesser(cfg: &RunConfig, draws: usize, facts: usize) -> Result<f64> {
    let vocab = Vocab::new(cfg.world.num_categories);
    let mut worst = 0.0_f64;
    for d in 0..draws {
        let mut rng = SeededRng::derive(cfg.seed, "audit-guesser", (d as u64) << 8 | facts as u64);
        let mut net = GuesserNet::new(vocab.len(), cfg.world.num_categories, &cfg.model, &mut rng);
        randomize(&mut net.store, 0.5, &mut rng);
        let (world, dialogue) = audit_world(cfg, "audit-guesser-world", d)?;
        let dialogue: Vec<QaPair> = dialogue.into_iter().take(facts).collect();
        let choice = rng.below(world.objects.len());
        let trace = net.trace(&dialogue, &world)?.into_policy_trace(choice);
        net.store.zero_grads();
        trace.accumulate(&mut net.store, 1.0)?;
        let mut probe = net.clone();
        let eval = |s: &ParamStore| {
            probe.store.clone_from(s);
            probe.trace(&dialogue, &world).expect("valid input").into_policy_trace(choice).log_prob().unwrap_or(f64::NAN)
        };
        worst = worst.max(finite_diff_check(&net.store, eval, FD_EPSILON, PROBES_PER_DRAW)?);
    }
    Ok(worst)
}

fn fd_check(report: &mut AuditReport, name: &str, result: Result<f64>, tolerance: f64) {
    match result {
        Ok(err) => report.push(
            name,
            err <= tolerance,
            format!("max_rel_err={err:.3e} limit={tolerance:.0e} draws={GRADIENT_DRAWS}"),
        ),
        Err(e) => report.push(name, false, format!("error: {e}")),
    }
}

/// Runs every property suite. Same config and fault give the same report.
pub fn run_audit(cfg: &RunConfig, fault: Fault) -> AuditReport {
    let mut report = AuditReport::default();
    let draws = GRADIENT_DRAWS;

    fd_check(&mut report, "gradient.linear_softmax", check_linear_softmax(cfg.seed, draws), FEEDFORWARD_TOLERANCE);
    fd_check(&mut report, "gradient.mlp_softmax", check_mlp_softmax(cfg.seed, draws), FEEDFORWARD_TOLERANCE);
    fd_check(&mut report, "gradient.qgen_unroll", check_qgen_unroll(cfg, draws, fault), RECURRENT_TOLERANCE);
    fd_check(&mut report, "gradient.guesser_attention", check_guesser(cfg, draws, 3), RECURRENT_TOLERANCE);

    let bandit = LinearSoftmaxBandit::standard(derive_seed(cfg.seed, "audit-bandit", 0));
    let exact = bandit.exact_gradient();
    let mut rng = SeededRng::derive(cfg.seed, "audit-bandit-samples", 0);
    let plain = bandit.estimate(BANDIT_SAMPLES, BaselineKind::Zero, &mut rng);
    let mut rng = SeededRng::derive(cfg.seed, "audit-bandit-samples", 1);
    let running = bandit.estimate(BANDIT_SAMPLES, BaselineKind::RunningAverage, &mut rng);
    for (name, est) in [("bandit.unbiased_zero_baseline", &plain), ("bandit.unbiased_running_baseline", &running)] {
        let z = est.max_z_score(&exact);
        report.push(name, z <= 3.0, format!("max_z={z:.3} limit=3 samples={BANDIT_SAMPLES}"));
    }
    report.push(
        "bandit.variance_reduction",
        running.total_variance < plain.total_variance,
        format!("with_baseline={:.6e} without={:.6e}", running.total_variance, plain.total_variance),
    );

    let target = [0.2, 0.3, 0.5];
    let mut rng = SeededRng::derive(cfg.seed, "audit-sampler", 0);
    let mut counts = [0usize; 3];
    for _ in 0..SAMPLER_DRAWS {
        counts[sample_categorical(&target, &mut rng).expect("valid pmf")] += 1;
    }
    let n = SAMPLER_DRAWS as f64;
    let z = counts
        .iter()
        .zip(&target)
        .map(|(&c, &p)| (c as f64 / n - p).abs() / (p * (1.0 - p) / n).sqrt())
        .fold(0.0, f64::max);
    report.push("sampling.frequency", z <= 4.0, format!("counts={counts:?} max_z={z:.3} limit=4"));

    let mut rng = SeededRng::derive(cfg.seed, "audit-temper", 0);
    let mut worst = 0.0_f64;
    let mut argmax_ok = true;
    for _ in 0..10_000 {
        let k = 2 + rng.below(20);
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let tau = 0.05 + 5.0 * rng.uniform();
        match temper(&p, tau) {
            Ok(t) => {
                worst = worst.max((t.iter().sum::<f64>() - 1.0).abs());
                argmax_ok &= greedy(&t).ok() == greedy(&p).ok();
            }
            Err(_) => argmax_ok = false,
        }
    }
    report.push(
        "sampling.temper_normalization",
        worst <= 1e-9 && argmax_ok,
        format!("max_sum_err={worst:.3e} argmax_preserved={argmax_ok}"),
    );
    report
}
