//! Centralized intersection coordination with PPO and model-accelerated PPO.
//!
//! The pieces, bottom-up: [`geometry`] builds the twelve lane paths and their
//! conflicts; [`env`] steps vehicles along them; [`model`] is the noise-free
//! kinematics used for imagined rollouts; [`nn`] holds the Gaussian actor and
//! the critic; [`ppo`] has GAE and the clipped update; [`trainer`] ties it all
//! together with synchronized workers. [`config`], [`checkpoint`], [`metrics`],
//! [`replay`] and [`cli`] are the file formats and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ppo;
pub mod replay;
pub mod rollout;
pub mod trainer;

pub use error::{Error, Result};
