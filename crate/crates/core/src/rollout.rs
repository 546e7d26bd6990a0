//! Policy rollouts over any step source: the noisy environment or the model.

use ndarray::Array2;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvState, IntersectionEnv, StepOutcome};
use crate::error::Result;
use crate::nn::{sample_action, Architecture};
use crate::ppo::TrajectoryBatch;

/// Something a policy can be run in.
pub trait Dynamics {
    /// Starts a new episode and returns its first observation.
    fn begin_episode(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    fn state(&self) -> &EnvState;
}

impl Dynamics for IntersectionEnv {
    fn begin_episode(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.reset(rng.next_u64()).1
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        IntersectionEnv::step(self, action)
    }

    fn state(&self) -> &EnvState {
        IntersectionEnv::state(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub length: usize,
    pub collided: bool,
    pub all_passed: bool,
    pub time_limit: bool,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub batch: TrajectoryBatch,
    /// Episodes that ended inside the batch; the trailing partial one is excluded.
    pub episodes: Vec<EpisodeSummary>,
    /// Pre-step states, recorded only when requested.
    pub visited_states: Vec<EnvState>,
}

/// Runs the stochastic policy for exactly `horizon` transitions, restarting
/// episodes inline. The last transition is marked truncated unless it ends an
/// episode, and carries the critic value of the state it leads to.
pub fn collect<D: Dynamics + ?Sized>(
    dynamics: &mut D,
    arch: &Architecture,
    params: &[f64],
    horizon: usize,
    rng: &mut ChaCha8Rng,
    record_states: bool,
) -> Result<Rollout> {
    let obs_dim = arch.obs_dim;
    let act_dim = arch.action_dim;
    let mut observations = Array2::zeros((horizon, obs_dim));
    let mut actions = Array2::zeros((horizon, act_dim));
    let mut behavior_mean = Array2::zeros((horizon, act_dim));
    let mut behavior_std = Array2::zeros((horizon, act_dim));
    let mut log_probs = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut dones = Vec::with_capacity(horizon);
    let mut truncated = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon);
    let mut bootstrap_values = Vec::with_capacity(horizon);
    let mut episodes = Vec::new();
    let mut visited_states = Vec::new();

    let mut obs = dynamics.begin_episode(rng);
    let mut ep_reward = 0.0;
    let mut ep_len = 0;
    for t in 0..horizon {
        if record_states {
            visited_states.push(dynamics.state().clone());
        }
        let policy = arch.actor_forward(params, &obs)?;
        let value = arch.critic_forward(params, &obs)?;
        let (action, log_prob) = sample_action(&policy, rng);
        let out = dynamics.step(&action)?;

        observations.row_mut(t).assign(&ndarray::ArrayView1::from(&obs));
        actions.row_mut(t).assign(&ndarray::ArrayView1::from(&action));
        behavior_mean.row_mut(t).assign(&ndarray::ArrayView1::from(&policy.mean));
        behavior_std.row_mut(t).assign(&ndarray::ArrayView1::from(&policy.std));
        log_probs.push(log_prob);
        rewards.push(out.reward);
        values.push(value);
        ep_reward += out.reward;
        ep_len += 1;

        if out.done {
            let terminal = out.terminal();
            dones.push(terminal);
            truncated.push(!terminal);
            bootstrap_values.push(if terminal {
                0.0
            } else {
                arch.critic_forward(params, &out.observation)?
            });
            episodes.push(EpisodeSummary {
                total_reward: ep_reward,
                length: ep_len,
                collided: out.collided(),
                all_passed: out.all_passed(),
                time_limit: out.time_limit(),
            });
            ep_reward = 0.0;
            ep_len = 0;
            if t + 1 < horizon {
                obs = dynamics.begin_episode(rng);
            }
        } else {
            dones.push(false);
            let cut = t + 1 == horizon;
            truncated.push(cut);
            bootstrap_values.push(if cut {
                arch.critic_forward(params, &out.observation)?
            } else {
                0.0
            });
            obs = out.observation;
        }
    }

    let batch = TrajectoryBatch {
        observations,
        actions,
        log_probs,
        behavior_mean,
        behavior_std,
        rewards,
        dones,
        truncated,
        values,
        bootstrap_values,
    };
    Ok(Rollout {
        batch,
        episodes,
        visited_states,
    })
}
