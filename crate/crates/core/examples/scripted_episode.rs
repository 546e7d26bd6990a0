//! Steps the environment with a hand-written controller: a vehicle goes when
//! no vehicle it conflicts with is nearer the center, otherwise it brakes.
//! Taking turns like this is slow, so the step limit is raised to 60 s.
//!
//!     cargo run --example scripted_episode -- [seed]

use std::sync::Arc;

use mappo::config::RunConfig;
use mappo::env::{IntersectionEnv, StepEvent};
use mappo::geometry::{classify_conflict, ConflictKind};

fn main() -> mappo::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().expect("seed")).unwrap_or(0);
    let mut config = RunConfig::default();
    config.env.max_steps = 600;
    let sim = Arc::new(config.simulator()?);
    let paths = sim.intersection.paths().to_vec();
    let mut env = IntersectionEnv::new(sim, true);
    env.reset(seed);

    let mut total = 0.0;
    loop {
        let vs = &env.state().vehicles;
        let action: Vec<f64> = vs
            .iter()
            .map(|me| {
                let blocked = vs.iter().any(|other| {
                    other.vehicle_type != me.vehicle_type
                        && other.active()
                        && other.d < me.d
                        && classify_conflict(me.vehicle_type, other.vehicle_type, &paths).kind != ConflictKind::None
                });
                if blocked { -3.0 } else { 3.0 }
            })
            .collect();
        let out = env.step(&action)?;
        total += out.reward;
        let t = env.state().step_count;
        for e in &out.events {
            match e {
                StepEvent::VehiclePassed(v) => println!("step {t:4}: {v:?} passed"),
                StepEvent::Collision(a, b) => println!("step {t:4}: {a:?} hit {b:?}"),
                StepEvent::AllPassed => println!("step {t:4}: all vehicles through"),
                StepEvent::TimeLimit => println!("step {t:4}: time limit"),
            }
        }
        if out.done {
            break;
        }
    }
    println!("episode reward {total}");
    Ok(())
}
