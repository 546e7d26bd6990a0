//! Greedy evaluation and trajectory export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{IntersectionEnv, StepEvent};
use crate::error::{Error, Result};
use crate::geometry::VehicleType;
use crate::nn::Architecture;

/// One vehicle at one instant. `t = 0` is the initial state (no action yet);
/// for `t ≥ 1`, `a`, `reward` and `events` belong to the step that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub t: usize,
    pub vehicle_type: VehicleType,
    pub d: f64,
    pub v: f64,
    pub a: f64,
    pub x: f64,
    pub y: f64,
    pub reward: f64,
    pub events: Vec<StepEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyEpisode {
    pub records: Vec<ReplayRecord>,
    pub total_reward: f64,
    pub length: usize,
    pub collided: bool,
    pub all_passed: bool,
}

/// Runs one episode with the mean action of the policy.
pub fn greedy_episode(env: &mut IntersectionEnv, arch: &Architecture, params: &[f64], seed: u64) -> Result<GreedyEpisode> {
    let (_, mut obs) = env.reset(seed);
    let mut records = Vec::new();
    snapshot(env, 0, &[], 0.0, &[], &mut records)?;
    let mut total_reward = 0.0;
    let mut t = 0;
    loop {
        let action = arch.actor_forward(params, &obs)?.mean;
        let out = env.step(&action)?;
        t += 1;
        total_reward += out.reward;
        snapshot(env, t, &out.applied_action, out.reward, &out.events, &mut records)?;
        if out.done {
            return Ok(GreedyEpisode {
                records,
                total_reward,
                length: t,
                collided: out.collided(),
                all_passed: out.all_passed(),
            });
        }
        obs = out.observation;
    }
}

fn snapshot(
    env: &IntersectionEnv,
    t: usize,
    action: &[f64],
    reward: f64,
    events: &[StepEvent],
    out: &mut Vec<ReplayRecord>,
) -> Result<()> {
    let state = env.state();
    let poses = env.simulator().poses(state)?;
    for (i, (veh, pose)) in state.vehicles.iter().zip(poses).enumerate() {
        out.push(ReplayRecord {
            t,
            vehicle_type: veh.vehicle_type,
            d: veh.d,
            v: veh.v,
            a: action.get(i).copied().unwrap_or(0.0),
            x: pose.x,
            y: pose.y,
            reward,
            events: events.to_vec(),
        });
    }
    Ok(())
}

fn env_for(ckpt: &Checkpoint) -> Result<(IntersectionEnv, Architecture)> {
    let sim = Arc::new(ckpt.config.simulator()?);
    Ok((IntersectionEnv::new(sim, true), ckpt.config.architecture()))
}

/// Writes one greedy episode as JSON lines and returns the records written.
pub fn export_replay(ckpt: &Checkpoint, seed: u64, path: &Path) -> Result<Vec<ReplayRecord>> {
    let (mut env, arch) = env_for(ckpt)?;
    let episode = greedy_episode(&mut env, &arch, &ckpt.params.values, seed)?;
    write_replay(path, &episode.records)?;
    Ok(episode.records)
}

pub fn write_replay(path: &Path, records: &[ReplayRecord]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(ctx(), e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_replay(path: &Path) -> Result<Vec<ReplayRecord>> {
    let ctx = || format!("reading {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(ctx(), e))?;
        if line.is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::io(ctx(), e.into()))?);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    /// Population standard deviation over episodes.
    pub std_reward: f64,
    pub collision_rate: f64,
    pub all_pass_rate: f64,
    pub mean_length: f64,
}

/// Greedy evaluation over `episodes` episodes seeded `seed, seed + 1, …`.
pub fn evaluate(ckpt: &Checkpoint, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let (mut env, arch) = env_for(ckpt)?;
    evaluate_params(&mut env, &arch, &ckpt.params.values, episodes, seed)
}

pub fn evaluate_params(
    env: &mut IntersectionEnv,
    arch: &Architecture,
    params: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::ShapeMismatch("evaluation needs at least one episode".into()));
    }
    let mut rewards = Vec::with_capacity(episodes);
    let (mut collisions, mut passes, mut length) = (0usize, 0usize, 0usize);
    for k in 0..episodes as u64 {
        let ep = greedy_episode(env, arch, params, seed.wrapping_add(k))?;
        rewards.push(ep.total_reward);
        collisions += ep.collided as usize;
        passes += ep.all_passed as usize;
        length += ep.length;
    }
    let n = episodes as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalSummary {
        episodes,
        mean_reward: mean,
        std_reward: var.sqrt(),
        collision_rate: collisions as f64 / n,
        all_pass_rate: passes as f64 / n,
        mean_length: length as f64 / n,
    })
}
