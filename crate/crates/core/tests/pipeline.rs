use std::fs;
use std::path::Path;
use std::process::Command;

use tpg_core::pipeline::*;
use tpg_core::trainer::METRICS_HEADER;
use tpg_core::{Checkpoint, RunConfig, Variant};

fn small(dir: &Path, variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.timing = false;
    cfg.pretrain.episodes = 48;
    cfg.pretrain.epochs = 2;
    cfg.trainer.variant = variant;
    cfg.trainer.epochs = 2;
    cfg.trainer.worlds_per_epoch = 24;
    cfg.trainer.batch_size = 8;
    cfg.eval.episodes = 40;
    cfg
}

fn full_run(dir: &Path, variant: Variant) -> Vec<u8> {
    let cfg = small(dir, variant);
    cmd_pretrain(&cfg).unwrap();
    cmd_train(&cfg, &dir.join(PRETRAIN_CHECKPOINT)).unwrap();
    fs::read(dir.join(METRICS)).unwrap()
}

#[test]
fn runs_are_byte_reproducible() {
    for variant in [Variant::Reinforce, Variant::ParallelTpg, Variant::DynamicTpg] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = full_run(a.path(), variant);
        assert_eq!(ma, full_run(b.path(), variant));
        let text = String::from_utf8(ma).unwrap();
        assert_eq!(text.lines().next(), Some(METRICS_HEADER));
        assert_eq!(text.lines().count(), 3);
        for f in [PRETRAIN_CHECKPOINT, TRAIN_CHECKPOINT, PRETRAIN_LOSS, VOCAB] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let cfg = small(a.path(), variant);
        let r1 = cmd_evaluate(&cfg, &a.path().join(TRAIN_CHECKPOINT)).unwrap();
        let r2 = cmd_evaluate(&cfg, &b.path().join(TRAIN_CHECKPOINT)).unwrap();
        assert_eq!(r1, r2);
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let straight = full_run(a.path(), Variant::DynamicTpg);

    let mut cfg = small(b.path(), Variant::DynamicTpg);
    cmd_pretrain(&cfg).unwrap();
    cfg.trainer.epochs = 1;
    cmd_train(&cfg, &b.path().join(PRETRAIN_CHECKPOINT)).unwrap();
    cfg.trainer.epochs = 2;
    let rows = cmd_train(&cfg, &b.path().join(TRAIN_CHECKPOINT)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(fs::read(b.path().join(METRICS)).unwrap(), straight);
    assert_eq!(
        fs::read(a.path().join(TRAIN_CHECKPOINT)).unwrap(),
        fs::read(b.path().join(TRAIN_CHECKPOINT)).unwrap()
    );
}

#[test]
fn zero_pretraining_budget_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Variant::Reinforce);
    cfg.pretrain.episodes = 0;
    let s = cmd_pretrain(&cfg).unwrap();
    assert_eq!(s.steps, 0);
    assert_eq!(s.final_qgen_nll, None);
    let state = load_state(&cfg, &dir.path().join(PRETRAIN_CHECKPOINT)).unwrap();
    let init = init_agents(&cfg);
    assert_eq!(state.agents.qgen.store.values(), init.qgen.store.values());
    assert_eq!(state.agents.guesser.store.values(), init.guesser.store.values());
    assert_eq!(state.epochs_completed, 0);
}

#[test]
fn pretraining_lowers_both_losses() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Variant::Reinforce);
    cfg.pretrain.episodes = 256;
    cfg.pretrain.epochs = 3;
    let s = cmd_pretrain(&cfg).unwrap();
    assert!(s.final_qgen_nll.unwrap() < s.initial_qgen_nll.unwrap());
    assert!(s.final_guesser_nll.unwrap() < s.initial_guesser_nll.unwrap());
    let curve = fs::read_to_string(dir.path().join(PRETRAIN_LOSS)).unwrap();
    assert_eq!(curve.lines().count(), s.steps + 1);
}

#[test]
fn episodes_are_logged_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Variant::ParallelTpg);
    cfg.log_episodes = true;
    cmd_pretrain(&cfg).unwrap();
    cmd_train(&cfg, &dir.path().join(PRETRAIN_CHECKPOINT)).unwrap();
    let log = fs::read_to_string(dir.path().join(EPISODES)).unwrap();
    assert_eq!(log.lines().count(), 2 * 24 * 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first.get("steps").is_some());
}

#[test]
fn checkpoint_from_another_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Variant::Reinforce);
    cfg.pretrain.episodes = 0;
    cmd_pretrain(&cfg).unwrap();
    cfg.model.hidden += 4;
    let err = load_state(&cfg, &dir.path().join(PRETRAIN_CHECKPOINT)).unwrap_err();
    assert!(matches!(err, tpg_core::Error::Compatibility(_)), "{err}");
    let ck = Checkpoint::load(&dir.path().join(PRETRAIN_CHECKPOINT)).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), fs::read(dir.path().join(PRETRAIN_CHECKPOINT)).unwrap());
}

fn tpg(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tpg")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    let (code, _, err) = tpg(&["pretrain", "--config", &format!("{d}/missing.toml")]);
    assert_eq!(code, 2, "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_field = 1\n").unwrap();
    assert_eq!(tpg(&["train", "--config", bad.to_str().unwrap()]).0, 2);

    let (code, _, _) = tpg(&["train", "--checkpoint", &format!("{d}/none.json"), "--output-dir", d]);
    assert_eq!(code, 2);

    assert_ne!(tpg(&["train", "--variant", "annealed"]).0, 0);

    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        format!(
            "output_dir = {d:?}\ntiming = false\n[pretrain]\nepisodes = 32\nepochs = 1\n\
             [trainer]\nepochs = 1\nworlds_per_epoch = 16\nbatch_size = 8\n[eval]\nepisodes = 20\n"
        ),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(tpg(&["pretrain", "--config", c]).0, 0);
    let (code, out, _) = tpg(&["train", "--config", c, "--variant", "single_tpg", "--seed", "4"]);
    assert_eq!(code, 0);
    assert!(out.contains("single_tpg"), "{out}");
    let (code, out, _) = tpg(&["evaluate", "--config", c]);
    assert_eq!(code, 0);
    assert!(out.contains("success_rate"), "{out}");
}

#[test]
fn cli_audit_passes_and_catches_a_planted_fault() {
    let (code, out, _) = tpg(&["audit"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.ends_with("9 checks, 0 failed\n"), "{out}");
    let (code, out, _) = tpg(&["audit", "--inject-fault"]);
    assert_eq!(code, 1);
    assert!(out.contains("FAIL gradient.qgen_unroll"), "{out}");
}
