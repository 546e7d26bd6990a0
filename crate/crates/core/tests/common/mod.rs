//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use mappo::checkpoint::Checkpoint;
use mappo::config::RunConfig;
use mappo::env::{EnvConfig, EnvState, RewardTable, Simulator, StepEvent, VehicleKinematicState};
use mappo::metrics::MetricsWriter;
use mappo::replay::ReplayRecord;
use mappo::geometry::{Intersection, IntersectionLayout, Path, VehicleType};
use mappo::ppo::TrajectoryBatch;
use mappo::trainer::{resume_into, train, Algo, Trainer, CHECKPOINT_FILE, METRICS_FILE};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A well-formed batch with random rewards/values and random episode cuts.
/// The last transition always ends the batch, either as done or truncated.
pub fn random_batch(rng: &mut ChaCha8Rng, len: usize) -> TrajectoryBatch {
    let mut dones = vec![false; len];
    let mut truncated = vec![false; len];
    let mut bootstrap_values = vec![0.0; len];
    for t in 0..len {
        let r: f64 = rng.random();
        if t + 1 == len {
            if r < 0.5 {
                dones[t] = true;
            } else {
                truncated[t] = true;
            }
        } else if r < 0.15 {
            dones[t] = true;
        } else if r < 0.2 {
            truncated[t] = true;
        }
        if truncated[t] {
            bootstrap_values[t] = rng.random_range(-20.0..20.0);
        }
    }
    TrajectoryBatch {
        observations: Array2::zeros((len, 2)),
        actions: Array2::zeros((len, 1)),
        log_probs: vec![0.0; len],
        behavior_mean: Array2::zeros((len, 1)),
        behavior_std: Array2::ones((len, 1)),
        rewards: (0..len).map(|_| rng.random_range(-60.0..60.0)).collect(),
        dones,
        truncated,
        values: (0..len).map(|_| rng.random_range(-30.0..30.0)).collect(),
        bootstrap_values,
    }
}

/// Advantages as the explicit double sum over each episode segment:
/// A_t = sum_{l=t}^{end} (γλ)^{l-t} δ_l, with δ computed from scratch.
pub fn gae_double_sum(b: &TrajectoryBatch, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = b.rewards.len();
    let delta = |l: usize| {
        let next = if b.dones[l] {
            0.0
        } else if b.truncated[l] {
            b.bootstrap_values[l]
        } else {
            b.values[l + 1]
        };
        b.rewards[l] + gamma * next - b.values[l]
    };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for l in t..n {
                sum += (gamma * lambda).powi((l - t) as i32) * delta(l);
                if b.dones[l] || b.truncated[l] {
                    break;
                }
            }
            sum
        })
        .collect()
}

/// Central finite-difference gradient.
pub fn finite_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest coordinate-wise relative error, with a small absolute floor for
/// coordinates whose true derivative is (numerically) zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Length of a path measured by walking its pose function at 1 mm spacing.
pub fn dense_length(path: &Path, from_d: f64, to_d: f64) -> f64 {
    let steps = ((from_d - to_d).abs() / 1e-3).ceil() as usize;
    let mut prev = path.position(from_d).unwrap();
    let mut total = 0.0;
    for k in 1..=steps {
        let d = from_d + (to_d - from_d) * k as f64 / steps as f64;
        let pose = path.position(d).unwrap();
        total += pose.distance(&prev);
        prev = pose;
    }
    total
}

pub fn simulator(vehicles: &[VehicleType], tweak: impl FnOnce(&mut EnvConfig)) -> Arc<Simulator> {
    let mut cfg = EnvConfig {
        vehicles: vehicles.to_vec(),
        ..EnvConfig::default()
    };
    tweak(&mut cfg);
    let isect = Arc::new(Intersection::new(IntersectionLayout::default()).unwrap());
    Arc::new(Simulator::new(isect, cfg, RewardTable::default()).unwrap())
}

pub fn state_of(vehicles: &[(VehicleType, f64, f64)]) -> EnvState {
    EnvState {
        vehicles: vehicles
            .iter()
            .map(|&(vehicle_type, d, v)| VehicleKinematicState {
                vehicle_type,
                d,
                v,
                passed: false,
                collided: false,
            })
            .collect(),
        step_count: 0,
        terminated: false,
    }
}

/// Outcome of sweeping two constant-speed vehicles through time.
pub struct CollisionSweep {
    /// First step at which the environment reported a collision.
    pub env_step: Option<usize>,
    /// First instant (dense sampling) the footprints overlap.
    pub dense_contact: Option<f64>,
    pub dt: f64,
}

/// Drives `a` and `b` at constant speed with zero acceleration, noise off,
/// through the environment and through a dense continuous-time oracle.
pub fn collision_sweep(a: (VehicleType, f64, f64), b: (VehicleType, f64, f64), horizon_s: f64) -> CollisionSweep {
    let sim = simulator(&[a.0, b.0], |c| c.max_steps = 100_000);
    let dt = sim.config.dt;
    let limit = 2.0 * sim.config.vehicle_radius;
    let pass = -sim.config.d_pass;

    let steps = (horizon_s / dt).round() as usize;
    let mut state = state_of(&[a, b]);
    let mut env_step = None;
    for k in 1..=steps {
        let (next, out) = sim.step::<ChaCha8Rng>(&state, &[0.0, 0.0], None).unwrap();
        if out.collided() {
            env_step = Some(k);
            break;
        }
        if out.done {
            break;
        }
        state = next;
    }

    let pa = sim.intersection.path(a.0);
    let pb = sim.intersection.path(b.0);
    let fine = dt / 100.0;
    let mut dense_contact = None;
    for k in 0..=(steps * 100) {
        let t = k as f64 * fine;
        let da = a.1 - a.2 * t;
        let db = b.1 - b.2 * t;
        if da <= pass || db <= pass {
            break;
        }
        let dist = pa.position(da).unwrap().distance(&pb.position(db).unwrap());
        if dist < limit {
            dense_contact = Some(t);
            break;
        }
    }
    CollisionSweep {
        env_step,
        dense_contact,
        dt,
    }
}

/// Median of a slice (infinities allowed).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starts every vehicle from rest at its reset position and releases them
/// one at a time (front-most first, full throttle) while the rest hold, so the
/// episode ends with everyone through and nobody touching.
pub fn scripted_all_pass(seed: u64) -> (usize, f64, Vec<f64>) {
    let sim = simulator(&VehicleType::EXPERIMENT_MODES, |c| c.max_steps = 5_000);
    let mut state = sim.reset(seed);
    state.vehicles.iter_mut().for_each(|v| v.v = 0.0);
    let mut rewards = Vec::new();
    loop {
        let released = state
            .vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.passed)
            .min_by(|a, b| a.1.d.total_cmp(&b.1.d))
            .map(|(i, _)| i);
        let action: Vec<f64> = (0..state.vehicles.len()).map(|i| if Some(i) == released { 3.0 } else { -3.0 }).collect();
        let (next, out) = sim.step::<ChaCha8Rng>(&state, &action, None).unwrap();
        rewards.push(out.reward);
        if out.done {
            assert!(out.all_passed(), "scripted episode must finish cleanly: {:?}", out.events);
            return (rewards.len(), rewards.iter().sum(), rewards);
        }
        state = next;
    }
}

/// Episode-level checks on a replay: layout, terminal event, speed continuity.
pub fn check_replay(records: &[ReplayRecord], n: usize, cfg: &RunConfig) {
    assert_eq!(records.len() % n, 0);
    let steps = records.len() / n - 1;
    for (k, chunk) in records.chunks(n).enumerate() {
        assert!(chunk.iter().all(|r| r.t == k));
    }
    let last = &records[records.len() - 1].events;
    assert!(last.iter().any(|e| matches!(e, StepEvent::AllPassed | StepEvent::Collision(..) | StepEvent::TimeLimit)));
    let bound = (cfg.env.a_max.max(-cfg.env.a_min) + 6.0 * cfg.env.noise_std) * cfg.env.dt + 1e-12;
    for i in 0..n {
        for t in 0..steps {
            let (a, b) = (&records[t * n + i], &records[(t + 1) * n + i]);
            assert_eq!(a.vehicle_type, b.vehicle_type);
            assert!((b.v - a.v).abs() <= bound, "Δv {} at t={t}", b.v - a.v);
        }
    }
}

/// A few-second configuration: two vehicles, small network, short batches.
pub fn tiny_config(algo: Algo, workers: usize, iterations: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.env.vehicles = vec![VehicleType::RL, VehicleType::UD];
    c.train.algo = algo;
    c.train.workers = workers;
    c.train.hidden_units = 16;
    c.train.batch_size = 128;
    c.train.minibatch_size = 32;
    c.train.epochs = 2;
    c.train.total_timesteps = iterations * workers as u64 * 128;
    c.train.seeds = vec![3];
    c.model.horizon = 128;
    c.run.deterministic = true;
    c
}

/// Splits a run at `split` iterations through a checkpoint on disk.
pub fn split_run_matches(algo: Algo, total: u64, split: u64) -> bool {
    let cfg = tiny_config(algo, 2, total);
    let whole = tempfile::tempdir().unwrap();
    train(&cfg, whole.path()).unwrap();

    let part = tempfile::tempdir().unwrap();
    let dir = part.path().join("seed_3");
    std::fs::create_dir_all(&dir).unwrap();
    let mut first = Trainer::new(cfg.clone(), 3).unwrap();
    let mut metrics = MetricsWriter::create(&dir.join(METRICS_FILE)).unwrap();
    for _ in 0..split {
        metrics.write(&first.train_iteration().unwrap()).unwrap();
    }
    first.checkpoint().save(&dir.join(CHECKPOINT_FILE)).unwrap();
    drop((first, metrics));

    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
    let mut metrics = MetricsWriter::append(&dir.join(METRICS_FILE)).unwrap();
    resume_into(&mut resumed, &mut metrics, &dir, &mut Vec::new()).unwrap();

    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join("seed_3").join(f)).unwrap();
    read(whole.path(), METRICS_FILE) == read(part.path(), METRICS_FILE)
        && read(whole.path(), CHECKPOINT_FILE) == read(part.path(), CHECKPOINT_FILE)
}

