//! The full eight-mode intersection for a short run, printing 10-iteration
//! window means of the episode reward.
//!
//!     cargo run --release --example eight_vehicle_smoke -- [ppo|mappo] [seed] [iterations] [batch]

use mappo::config::RunConfig;
use mappo::trainer::{Algo, Trainer};

fn main() -> mappo::Result<()> {
    let mut args = std::env::args().skip(1);
    let algo: Algo = args.next().as_deref().unwrap_or("ppo").parse().expect("algo is ppo or mappo");
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let iterations: u64 = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(50);
    let batch: usize = args.next().map(|s| s.parse().expect("batch")).unwrap_or(2048);

    let mut config = RunConfig::default();
    config.train.algo = algo;
    config.train.workers = 4;
    config.train.batch_size = batch;
    config.model.horizon = batch;
    config.train.total_timesteps = iterations * 4 * batch as u64;

    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(config, seed)?;
    let mut window = Vec::new();
    let mut outcomes = [0usize; 3];
    while !trainer.finished() {
        let r = trainer.train_iteration()?;
        for e in trainer.last_episodes() {
            outcomes[if e.collided { 0 } else if e.all_passed { 1 } else { 2 }] += 1;
        }
        window.push(r.mean_ep_reward);
        if window.len() == 10 {
            println!(
                "iterations {:3}..{:3}  mean reward {:8.2}  mean length {:6.1}",
                r.iteration - 9,
                r.iteration,
                window.iter().sum::<f64>() / 10.0,
                r.mean_ep_len
            );
            window.clear();
        }
    }
    println!(
        "episodes: {} collisions, {} all-pass, {} time limit; {:.1}s",
        outcomes[0],
        outcomes[1],
        outcomes[2],
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
