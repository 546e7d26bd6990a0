//! Trains PPO or MA-PPO on a two-vehicle crossing (RL vs UD) at desk scale and
//! prints the learning curve.
//!
//!     cargo run --release --example two_vehicle_crossing -- [ppo|mappo] [seed] [env_steps] [batch] [lr]

use std::time::Instant;

use mappo::config::RunConfig;
use mappo::geometry::VehicleType;
use mappo::trainer::{Algo, Trainer};

fn main() -> mappo::Result<()> {
    let mut args = std::env::args().skip(1);
    let algo: Algo = args.next().as_deref().unwrap_or("mappo").parse().expect("algo is ppo or mappo");
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let env_steps: u64 = args.next().map(|s| s.parse().expect("env_steps")).unwrap_or(196_608);
    let batch: usize = args.next().map(|s| s.parse().expect("batch")).unwrap_or(512);
    let lr: f64 = args.next().map(|s| s.parse().expect("lr")).unwrap_or(1e-3);

    let mut config = RunConfig::default();
    config.env.vehicles = vec![VehicleType::RL, VehicleType::UD];
    config.train.algo = algo;
    config.train.workers = 4;
    config.train.batch_size = batch;
    config.train.lr_start = lr;
    config.model.horizon = batch;
    config.train.total_timesteps = env_steps;

    let mut trainer = Trainer::new(config, seed)?;
    let start = Instant::now();
    println!("iter  env_steps  reward   ep_len  collisions  kl");
    while !trainer.finished() {
        let r = trainer.train_iteration()?;
        let eps = trainer.last_episodes();
        let collided = eps.iter().filter(|e| e.collided).count();
        println!(
            "{:4}  {:9}  {:7.2}  {:6.1}  {:4}/{:<5}  {:.4}",
            r.iteration, r.env_steps, r.mean_ep_reward, r.mean_ep_len, collided, eps.len(), r.kl
        );
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
