//! Command-line surface: `train`, `eval`, `replay`, `validate-config`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{load_config, RunConfig};
use crate::error::Result;
use crate::replay::{evaluate, export_replay};
use crate::trainer::{train, Algo};

/// Environment variable naming the output root when `--out` is absent.
pub const OUT_DIR_ENV: &str = "MAPPO_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "mappo", about = "PPO / MA-PPO intersection coordination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every configured seed, writing metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export one greedy episode as JSON lines.
    Replay {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse and validate a config file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

/// `--out`, then the environment variable, then `run.out_dir`, then `runs`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<OsString>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    config.run.out_dir.as_deref().unwrap_or("runs").into()
}

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train { config, algo, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(algo) = algo {
                cfg.train.algo = algo;
            }
            if let Some(seed) = seed {
                cfg.train.seeds = vec![seed];
            }
            let out = resolve_out_dir(out.as_deref(), std::env::var_os(OUT_DIR_ENV), &cfg);
            std::fs::create_dir_all(&out).map_err(|e| crate::error::Error::io(format!("creating {}", out.display()), e))?;
            std::fs::write(out.join("config.toml"), cfg.to_text())
                .map_err(|e| crate::error::Error::io(format!("writing config echo in {}", out.display()), e))?;
            let runs = train(&cfg, &out)?;
            let mut failed = false;
            for run in &runs {
                match (&run.error, run.reports.last()) {
                    (Some(e), _) => {
                        failed = true;
                        println!("seed {}: failed after {} iterations: {e}", run.seed, run.reports.len());
                    }
                    (None, Some(last)) => println!(
                        "seed {}: {} iterations, {} env steps, final mean episode reward {:.3} -> {}",
                        run.seed,
                        last.iteration,
                        last.env_steps,
                        last.mean_ep_reward,
                        run.dir.display()
                    ),
                    (None, None) => println!("seed {}: no iterations -> {}", run.seed, run.dir.display()),
                }
            }
            Ok(if failed { 1 } else { 0 })
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let s = evaluate(&ckpt, episodes, seed)?;
            println!("episodes {}", s.episodes);
            println!("mean_reward {:.6}", s.mean_reward);
            println!("std_reward {:.6}", s.std_reward);
            println!("collision_rate {:.6}", s.collision_rate);
            println!("all_pass_rate {:.6}", s.all_pass_rate);
            println!("mean_length {:.3}", s.mean_length);
            Ok(0)
        }
        Command::Replay { checkpoint, out, seed } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let records = export_replay(&ckpt, seed, &out)?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(0)
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            println!(
                "ok: {} vehicles, algo {:?}, {} iterations per seed",
                cfg.env.vehicles.len(),
                cfg.train.algo,
                cfg.train.iterations()
            );
            Ok(0)
        }
    }
}
