#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tpg_core::audit::{run_audit, Fault};
use tpg_core::pipeline::{self, PRETRAIN_CHECKPOINT};
use tpg_core::{Error, RunConfig, Variant};

#[derive(Parser)]
#[command(name = "tpg", version, about = "Tempered policy gradient training for a question-and-guess game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Behavior-clone both agents on scripted expert dialogues.
    Pretrain(Common),
    /// RL training from a checkpoint (resumes if the checkpoint has completed epochs).
    Train(Common),
    /// Greedy success rate on held-out worlds.
    Evaluate(Common),
    /// Gradient, estimator and sampler property checks.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// reinforce, single_tpg, parallel_tpg or dynamic_tpg
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> tpg_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.trainer.variant = v;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn checkpoint(&self, cfg: &RunConfig, default: &str) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join(default))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Config(_) | Error::Format(_) | Error::Compatibility(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> tpg_core::Result<bool> {
    match cli.command {
        Command::Pretrain(c) => {
            let cfg = c.load()?;
            let s = pipeline::cmd_pretrain(&cfg)?;
            println!("pretrained on {} expert episodes in {} steps", s.episodes, s.steps);
            if let (Some(a), Some(b)) = (s.initial_qgen_nll, s.final_qgen_nll) {
                println!("qgen nll {a:.4} -> {b:.4}");
            }
            if let (Some(a), Some(b)) = (s.initial_guesser_nll, s.final_guesser_nll) {
                println!("guesser nll {a:.4} -> {b:.4}");
            }
            println!("wrote {}", cfg.output_dir.join(PRETRAIN_CHECKPOINT).display());
            Ok(true)
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let ckpt = c.checkpoint(&cfg, PRETRAIN_CHECKPOINT);
            let rows = pipeline::cmd_train(&cfg, &ckpt)?;
            for m in &rows {
                println!(
                    "epoch {:>3} {} success {:.4} len {:.2} tau {:.3} baseline {:.4}",
                    m.epoch, m.variant, m.success_rate, m.mean_dialogue_len, m.mean_temperature, m.baseline
                );
            }
            println!("wrote {}", cfg.output_dir.join(pipeline::METRICS).display());
            Ok(true)
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let ckpt = c.checkpoint(&cfg, pipeline::TRAIN_CHECKPOINT);
            let r = pipeline::cmd_evaluate(&cfg, &ckpt)?;
            println!(
                "episodes {} success_rate {:.4} mean_dialogue_len {:.3}",
                r.episodes, r.success_rate, r.mean_dialogue_len
            );
            Ok(true)
        }
        Command::Audit { common, inject_fault } => {
            let cfg = common.load()?;
            let fault = if inject_fault { Fault::QGenGradient } else { Fault::None };
            let report = run_audit(&cfg, fault);
            print!("{}", report.render());
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
