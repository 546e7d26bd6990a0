//! The known kinematics model used for imagination rollouts.
//!
//! It is the environment's step logic with the actuation noise removed, so
//! imagined batches have exactly the real batch format.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Simulator, StepOutcome};
use crate::error::{Error, Result};
use crate::nn::Architecture;
use crate::rollout::{collect, Dynamics, Rollout};

/// Where imagined episodes start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RestartStrategy {
    /// Fresh draws from the environment's reset distribution.
    #[default]
    Initial,
    /// Uniform draws from states visited in the latest real rollout.
    RealStates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelRolloutConfig {
    /// Imagined transitions per worker per model iteration.
    pub horizon: usize,
    pub restart: RestartStrategy,
}

impl Default for ModelRolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 2048,
            restart: RestartStrategy::Initial,
        }
    }
}

impl ModelRolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("model.horizon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KinematicsModel {
    sim: Arc<Simulator>,
    state: EnvState,
    start_pool: Vec<EnvState>,
    restart: RestartStrategy,
}

impl KinematicsModel {
    pub fn new(sim: Arc<Simulator>, restart: RestartStrategy) -> Self {
        let state = sim.reset(0);
        Self {
            sim,
            state,
            start_pool: Vec::new(),
            restart,
        }
    }

    /// Noise-free transition; same contract as the environment step.
    pub fn imagine_step(&self, state: &EnvState, action: &[f64]) -> Result<(EnvState, StepOutcome)> {
        self.sim.step::<ChaCha8Rng>(state, action, None)
    }

    /// Replaces the pool used by [`RestartStrategy::RealStates`]. Terminated states are skipped.
    pub fn set_start_pool(&mut self, states: Vec<EnvState>) {
        self.start_pool = states.into_iter().filter(|s| !s.terminated).collect();
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }
}

impl Dynamics for KinematicsModel {
    fn begin_episode(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let seed = rng.next_u64();
        self.state = match (self.restart, self.start_pool.is_empty()) {
            (RestartStrategy::RealStates, false) => {
                let mut pick = ChaCha8Rng::seed_from_u64(seed);
                let mut s = self.start_pool.choose(&mut pick).expect("non-empty").clone();
                s.step_count = 0;
                s
            }
            _ => self.sim.reset(seed),
        };
        self.sim.observe(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let (next, out) = self.imagine_step(&self.state, action)?;
        self.state = next;
        Ok(out)
    }

    fn state(&self) -> &EnvState {
        &self.state
    }
}

/// Runs the policy in the model for `config.horizon` transitions.
pub fn imagine_rollout(
    model: &mut KinematicsModel,
    arch: &Architecture,
    params: &[f64],
    config: &ModelRolloutConfig,
    seed: u64,
) -> Result<Rollout> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collect(model, arch, params, config.horizon, &mut rng, false)
}
