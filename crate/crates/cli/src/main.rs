//! `shortvqa`: trials, aggregation, evaluation and ensembling from one config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shortvqa::config::RunConfig;
use shortvqa::fixture::synth_fixture;
use shortvqa::{pipeline, Error};

#[derive(Debug, Parser)]
#[command(name = "shortvqa", version, about = "Short-form video quality pipeline")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside resolve against its directory.
    #[arg(long, short, global = true, default_value = "config.toml")]
    config: PathBuf,

    /// Override a config key, e.g. `--set sampler.p=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Query the backend for every missing trial and update the trial cache.
    Trials,
    /// Average cached trials per video and write the stability profile.
    Aggregate,
    /// Report SRCC / PLCC against normalized MOS.
    Evaluate,
    /// Train the gating network on the training split.
    TrainEnsemble,
    /// Write blended predictions with a trained gate.
    Blend,
    /// List videos where the gate trusted the MLLM against a disagreeing model.
    Analyze,
    /// Generate a synthetic dataset with a ready-to-run config.
    Fixture {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        videos: usize,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Backend(e) if e.is_unreachable() => 2,
        Error::Metric(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Fixture { dir, seed, videos } = &cli.command {
        let fx = synth_fixture(dir, *seed, *videos)?;
        println!("wrote {} videos; config at {}", fx.truth.len(), fx.config.display());
        return Ok(());
    }
    let cfg = RunConfig::load(&cli.config, &cli.overrides)?;
    match cli.command {
        Command::Trials => {
            let o = pipeline::run_trials(&cfg)?;
            println!(
                "new trials: {}, backend calls: {}, failures: {}",
                o.new_trials, o.backend_calls, o.backend_failures
            );
        }
        Command::Aggregate => {
            let out = pipeline::aggregate(&cfg)?;
            println!("scored {} videos", out.scores.len());
            for s in &out.profile.summaries {
                println!(
                    "T={:<4} median std {:.4} (q1 {:.4}, q3 {:.4})",
                    s.trials_per_frame, s.median, s.q1, s.q3
                );
            }
            for t in &out.profile.skipped {
                println!("T={t} skipped: more than the cached trials per frame");
            }
        }
        Command::Evaluate => print!("{}", pipeline::evaluate(&cfg)?.render()),
        Command::TrainEnsemble => {
            let trained = pipeline::train_ensemble(&cfg)?;
            if let Some(last) = trained.epochs.last() {
                println!("epoch {} loss {:.6}", last.epoch, last.loss);
            }
        }
        Command::Blend => {
            let triples = pipeline::blend_predictions(&cfg)?;
            println!("blended {} videos", triples.len());
        }
        Command::Analyze => print!("{}", pipeline::render_findings(&pipeline::analyze(&cfg)?)),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
