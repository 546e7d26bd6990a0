//! Trains a small MA-PPO run to disk, resumes it from its checkpoint, then
//! evaluates the policy and exports a replay.
//!
//!     cargo run --release --example checkpoint_and_replay -- [out_dir]

use std::path::PathBuf;

use mappo::checkpoint::Checkpoint;
use mappo::config::RunConfig;
use mappo::geometry::VehicleType;
use mappo::metrics::{read_metrics, MetricsWriter};
use mappo::replay::{evaluate, export_replay};
use mappo::trainer::{resume_into, train, Algo, Trainer, CHECKPOINT_FILE, METRICS_FILE};

fn main() -> mappo::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "runs/checkpoint_demo".into()).into();

    let mut config = RunConfig::default();
    config.env.vehicles = vec![VehicleType::RL, VehicleType::UD];
    config.train.algo = Algo::Mappo;
    config.train.seeds = vec![7];
    config.train.workers = 2;
    config.train.batch_size = 512;
    config.train.lr_start = 1e-3;
    config.model.horizon = 512;
    config.train.total_timesteps = 10 * 2 * 512;
    config.train.checkpoint_every = 5;

    let run = train(&config, &out)?.remove(0);
    if let Some(e) = run.error {
        return Err(e);
    }
    println!("trained {} iterations into {}", run.reports.len(), run.dir.display());

    // Double the budget and keep going from the saved state.
    let mut ckpt = Checkpoint::load(&run.dir.join(CHECKPOINT_FILE))?;
    ckpt.config.train.total_timesteps *= 2;
    let mut trainer = Trainer::from_checkpoint(&ckpt)?;
    let mut metrics = MetricsWriter::append(&run.dir.join(METRICS_FILE))?;
    let mut reports = Vec::new();
    resume_into(&mut trainer, &mut metrics, &run.dir, &mut reports)?;
    let all = read_metrics(&run.dir.join(METRICS_FILE))?;
    println!(
        "resumed for {} more iterations; metrics.csv now has {} rows, last reward {:.2}",
        reports.len(),
        all.len(),
        all.last().map_or(f64::NAN, |r| r.mean_ep_reward)
    );

    let ckpt = Checkpoint::load(&run.dir.join(CHECKPOINT_FILE))?;
    let summary = evaluate(&ckpt, 50, 1)?;
    println!(
        "eval over {} episodes: mean reward {:.2} ± {:.2}, collisions {:.0}%, all passed {:.0}%",
        summary.episodes,
        summary.mean_reward,
        summary.std_reward,
        100.0 * summary.collision_rate,
        100.0 * summary.all_pass_rate
    );

    let replay_path = run.dir.join("replay.jsonl");
    let records = export_replay(&ckpt, 1, &replay_path)?;
    println!("wrote {} replay records to {}", records.len(), replay_path.display());
    Ok(())
}
