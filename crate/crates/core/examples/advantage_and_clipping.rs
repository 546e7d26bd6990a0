//! Advantage estimation and the clipped surrogate on a tiny hand-made batch.
//!
//!     cargo run --example advantage_and_clipping

use mappo::ppo::{clipped_objective, gae, td_errors, TrajectoryBatch};
use ndarray::Array2;

fn main() {
    // Two episodes: three steps ending in a collision, then two steps cut by the batch end.
    let rewards = vec![-1.0, -1.0, -51.0, -1.0, 9.0];
    let values = vec![-5.0, -8.0, -20.0, 3.0, 6.0];
    let n = rewards.len();
    let batch = TrajectoryBatch {
        observations: Array2::zeros((n, 1)),
        actions: Array2::zeros((n, 1)),
        log_probs: vec![0.0; n],
        behavior_mean: Array2::zeros((n, 1)),
        behavior_std: Array2::ones((n, 1)),
        rewards,
        dones: vec![false, false, true, false, false],
        truncated: vec![false, false, false, false, true],
        values,
        bootstrap_values: vec![0.0, 0.0, 0.0, 0.0, 4.0],
    };

    let deltas = td_errors(&batch, 0.99);
    println!("t   reward   value    delta   A(λ=0)  A(λ=0.95)  A(λ=1)");
    let (a0, a95, a1) = (gae(&batch, 0.99, 0.0), gae(&batch, 0.99, 0.95), gae(&batch, 0.99, 1.0));
    for t in 0..n {
        println!(
            "{t}  {:7.2}  {:6.2}  {:7.3}  {:7.3}  {:9.3}  {:7.3}",
            batch.rewards[t], batch.values[t], deltas[t], a0.advantages[t], a95.advantages[t], a1.advantages[t]
        );
    }

    println!("\nclipped objective, ε = 0.2 (value, d/dratio)");
    for (ratio, adv) in [(1.0, 2.0), (1.1, 2.0), (1.5, 2.0), (0.5, 2.0), (0.5, -2.0), (1.5, -2.0)] {
        let (value, slope) = clipped_objective(ratio, adv, 0.2);
        println!("  r = {ratio:.1}, A = {adv:+.1}  ->  {value:+.3}, {slope:+.1}");
    }
}
