use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ran_cli::commands::*;
use ran_cli::RunConfig;
use ran_core::Result;

#[derive(Parser)]
#[command(name = "ran", version, about = "Train and run recurrent attention network encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value run file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides train_path from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the task metric of a checkpoint on a data file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Label, tag or continue the given text.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Input text; read from stdin when absent.
        #[arg(long)]
        input: Option<String>,
        /// Tokens to generate (language models).
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        /// Sample instead of greedy decoding.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient check of the full model.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time training across window sizes; writes CSV.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "8,32,128,512")]
        windows: String,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.apply_env();
    Ok(cfg)
}

fn deterministic() -> bool {
    std::env::var("RAN_DETERMINISTIC").is_ok_and(|v| v == "1")
}

fn run(cli: Cli) -> Result<ExitCode> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train { config, out: ckpt, data, seed } => {
            let mut cfg = load_config(&config, seed)?;
            if data.is_some() {
                cfg.data.train_path = data;
                cfg.validate()?;
            }
            let s = cmd_train(&cfg, ckpt.as_deref(), &mut out)?;
            eprintln!(
                "trained {} steps, {} parameters, best {} {:.4}",
                s.steps,
                s.num_parameters,
                s.best.kind.name(),
                s.best.metric
            );
        }
        Command::Eval { ckpt, data } => {
            cmd_eval(&ckpt, &data, deterministic(), &mut out)?;
        }
        Command::Predict {
            ckpt,
            input,
            tokens,
            sample,
            seed,
        } => {
            let text = match input {
                Some(t) => t,
                None => io::read_to_string(io::stdin())?,
            };
            cmd_predict(&ckpt, &text, PredictOptions { tokens, sample, seed }, &mut out)?;
        }
        Command::GradCheck { seed } => {
            let (ok, _) = cmd_grad_check(seed, &mut out)?;
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench {
            config,
            windows,
            out: csv,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let windows = parse_windows(&windows)?;
            match csv {
                Some(p) => {
                    let mut f = std::fs::File::create(&p)?;
                    cmd_bench(&cfg, &windows, &mut f)?;
                    f.flush()?;
                }
                None => {
                    cmd_bench(&cfg, &windows, &mut out)?;
                }
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
