//! Synchronous data-parallel PPO and MA-PPO.
//!
//! `K` workers each own an environment, a kinematics model and a replica of
//! the parameters and Adam moments. Every minibatch the local gradients are
//! averaged and every replica applies the same global gradient, so replicas
//! stay bitwise identical. Workers run in parallel unless deterministic mode
//! is requested; both paths produce the same numbers.

use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::env::IntersectionEnv;
use crate::error::{Error, Result};
use crate::metrics::MetricsWriter;
use crate::model::{KinematicsModel, RestartStrategy};
use crate::nn::{AdamConfig, Architecture};
use crate::ppo::{update_epochs_synced, Learner, PreparedBatch, UpdateConfig, UpdateDiagnostics};
use crate::rollout::{collect, EpisodeSummary, Rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ppo,
    #[default]
    Mappo,
}

impl std::str::FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "mappo" => Ok(Algo::Mappo),
            other => Err(format!("unknown algorithm `{other}` (expected ppo or mappo)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    /// Real environment steps, summed over workers.
    pub total_timesteps: u64,
    /// Model iterations `M` per real iteration.
    pub model_iterations: usize,
    /// Real transitions per worker per iteration.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub workers: usize,
    pub seeds: Vec<u64>,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub sigma_min: f64,
    pub adam_eps: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub normalize_advantages: bool,
    pub entropy_coef: f64,
    /// Value-clipping range; 0 disables.
    pub value_clip: f64,
    /// Global gradient-norm limit; 0 disables.
    pub max_grad_norm: f64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Give every worker the same rollout streams.
    pub shared_worker_seed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Mappo,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            total_timesteps: 50_000_000,
            model_iterations: 1,
            batch_size: 2048,
            minibatch_size: 64,
            epochs: 10,
            lr_start: 3e-4,
            workers: 16,
            seeds: vec![1, 2, 3, 4, 5],
            hidden_layers: 2,
            hidden_units: 128,
            sigma_min: 0.01,
            adam_eps: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            normalize_advantages: true,
            entropy_coef: 0.0,
            value_clip: 0.0,
            max_grad_norm: 0.0,
            checkpoint_every: 50,
            shared_worker_seed: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("train.{k}");
        for (k, v) in [("gamma", self.gamma), ("clip_eps", self.clip_eps)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(key(k), format!("must lie in (0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(key("lambda"), format!("must lie in [0, 1], got {}", self.lambda)));
        }
        let positive = [
            ("total_timesteps", self.total_timesteps as f64),
            ("batch_size", self.batch_size as f64),
            ("minibatch_size", self.minibatch_size as f64),
            ("epochs", self.epochs as f64),
            ("workers", self.workers as f64),
            ("hidden_layers", self.hidden_layers as f64),
            ("hidden_units", self.hidden_units as f64),
            ("sigma_min", self.sigma_min),
            ("adam_eps", self.adam_eps),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key(k), format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lr_start", self.lr_start),
            ("entropy_coef", self.entropy_coef),
            ("value_clip", self.value_clip),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (k, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key(k), format!("must be non-negative, got {v}")));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key(k), format!("must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size % self.minibatch_size != 0 {
            return Err(Error::config(
                key("minibatch_size"),
                format!("must divide batch_size {}", self.batch_size),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config(key("seeds"), "at least one seed is required"));
        }
        Ok(())
    }

    pub fn update_config(&self) -> UpdateConfig {
        UpdateConfig {
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            clip_eps: self.clip_eps,
            entropy_coef: self.entropy_coef,
            value_clip: (self.value_clip > 0.0).then_some(self.value_clip),
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        }
    }

    /// Iterations needed to reach `total_timesteps`.
    pub fn iterations(&self) -> u64 {
        let per = (self.workers * self.batch_size) as u64;
        self.total_timesteps.div_ceil(per)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub env_steps: u64,
    pub model_steps: u64,
    pub mean_ep_reward: f64,
    pub mean_ep_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub lr: f64,
    pub wallclock_s: f64,
}

/// Linear annealing from `lr_start` to zero over training progress.
pub fn lr_schedule(lr_start: f64, progress: f64) -> f64 {
    lr_start * (1.0 - progress.clamp(0.0, 1.0))
}

/// Coordinate-wise mean of equally shaped gradients, summed pairwise so that
/// `K = 2^n` identical inputs reproduce the input exactly.
pub fn average_gradients(local: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = local
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no gradients to average".into()))?;
    if let Some(bad) = local.iter().find(|g| g.len() != first.len()) {
        return Err(Error::ShapeMismatch(format!(
            "gradient of length {} vs {}",
            bad.len(),
            first.len()
        )));
    }
    fn pairwise(parts: &[Vec<f64>], i: usize) -> f64 {
        match parts.len() {
            1 => parts[0][i],
            n => pairwise(&parts[..n / 2], i) + pairwise(&parts[n / 2..], i),
        }
    }
    let k = local.len() as f64;
    Ok((0..first.len()).map(|i| pairwise(local, i) / k).collect())
}

/// Derives an independent stream seed from the run seed and a position.
pub fn stream_seed(seed: u64, iteration: u64, worker: u64, purpose: u64) -> u64 {
    let mut x = seed;
    for part in [iteration, worker, purpose] {
        x = splitmix(x ^ splitmix(part.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

mod purpose {
    pub const INIT: u64 = 1;
    pub const REAL: u64 = 2;
    pub const MODEL: u64 = 3;
    pub const SHUFFLE: u64 = 4;
}

/// Runs the policy in a worker's environment for `horizon` transitions.
pub fn collect_rollout(
    env: &mut IntersectionEnv,
    arch: &Architecture,
    params: &[f64],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::ShapeMismatch("rollout horizon must be positive".into()));
    }
    collect(env, arch, params, horizon, rng, false)
}

#[derive(Debug, Clone)]
struct Worker {
    learner: Learner,
    env: IntersectionEnv,
    model: KinematicsModel,
}

/// Training state for one seed.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: RunConfig,
    seed: u64,
    arch: Architecture,
    workers: Vec<Worker>,
    iteration: u64,
    env_steps: u64,
    model_steps: u64,
    last_episodes: Vec<EpisodeSummary>,
}

impl Trainer {
    pub fn new(config: RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture();
        let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, purpose::INIT));
        let learner = Learner::new(arch.init_params(&mut init_rng));
        Self::with_learner(config, seed, learner, 0, 0, 0)
    }

    fn with_learner(
        config: RunConfig,
        seed: u64,
        learner: Learner,
        iteration: u64,
        env_steps: u64,
        model_steps: u64,
    ) -> Result<Self> {
        let arch = config.architecture();
        if learner.params.parameter_count() != arch.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for an architecture of {}",
                learner.params.parameter_count(),
                arch.parameter_count()
            )));
        }
        let sim = Arc::new(config.simulator()?);
        let workers = (0..config.train.workers)
            .map(|_| Worker {
                learner: learner.clone(),
                env: IntersectionEnv::new(sim.clone(), true),
                model: KinematicsModel::new(sim.clone(), config.model.restart),
            })
            .collect();
        Ok(Self {
            config,
            seed,
            arch,
            workers,
            iteration,
            env_steps,
            model_steps,
            last_episodes: Vec::new(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let learner = Learner {
            params: ckpt.params.clone(),
            adam: ckpt.adam.clone(),
        };
        Self::with_learner(
            ckpt.config.clone(),
            ckpt.seed,
            learner,
            ckpt.iteration,
            ckpt.env_steps,
            ckpt.model_steps,
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let lead = &self.workers[0].learner;
        Checkpoint {
            config: self.config.clone(),
            seed: self.seed,
            iteration: self.iteration,
            env_steps: self.env_steps,
            model_steps: self.model_steps,
            params: lead.params.clone(),
            adam: lead.adam.clone(),
            next_stream_seeds: self.stream_seeds_for(self.iteration),
        }
    }

    /// Seeds of the real-rollout streams the next iteration will use, one per worker.
    fn stream_seeds_for(&self, iteration: u64) -> Vec<u64> {
        (0..self.workers.len() as u64)
            .map(|w| stream_seed(self.seed, iteration, self.worker_stream(w), purpose::REAL))
            .collect()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn learner(&self, worker: usize) -> &Learner {
        &self.workers[worker].learner
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Real-environment episodes that finished during the latest iteration.
    pub fn last_episodes(&self) -> &[EpisodeSummary] {
        &self.last_episodes
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.config.train.total_timesteps
    }

    fn worker_stream(&self, worker: u64) -> u64 {
        if self.config.train.shared_worker_seed {
            0
        } else {
            worker
        }
    }

    fn parallel(&self) -> bool {
        !self.config.run.deterministic
    }

    pub fn current_lr(&self) -> f64 {
        let t = &self.config.train;
        lr_schedule(t.lr_start, self.env_steps as f64 / t.total_timesteps as f64)
    }

    /// One full iteration: the real phase, then `M` model phases for MA-PPO.
    pub fn train_iteration(&mut self) -> Result<IterationReport> {
        let start = Instant::now();
        let tc = self.config.train.clone();
        let lr = self.current_lr();
        let iteration = self.iteration;
        let record = self.config.model.restart == RestartStrategy::RealStates && tc.algo == Algo::Mappo;

        let real_seeds: Vec<u64> = self.stream_seeds_for(iteration);
        let rollouts = self.run_workers(|w, worker: &mut Worker, arch| {
            let mut rng = ChaCha8Rng::seed_from_u64(real_seeds[w]);
            collect(&mut worker.env, arch, &worker.learner.params.values, tc.batch_size, &mut rng, record)
        })?;
        let mut episodes = Vec::new();
        let mut batches = Vec::with_capacity(rollouts.len());
        for (w, rollout) in rollouts.into_iter().enumerate() {
            episodes.extend(rollout.episodes);
            if record {
                self.workers[w].model.set_start_pool(rollout.visited_states);
            }
            batches.push(PreparedBatch::new(rollout.batch, tc.gamma, tc.lambda, tc.normalize_advantages)?);
        }
        let mut diags = vec![self.update(&batches, lr, stream_seed(self.seed, iteration, 0, purpose::SHUFFLE))?];

        let mut model_steps = 0;
        if tc.algo == Algo::Mappo {
            let horizon = self.config.model.horizon;
            for m in 0..tc.model_iterations as u64 {
                let seeds: Vec<u64> = (0..self.workers.len() as u64)
                    .map(|w| stream_seed(self.seed, iteration, self.worker_stream(w), purpose::MODEL + 16 * m))
                    .collect();
                let rollouts = self.run_workers(|w, worker: &mut Worker, arch| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds[w]);
                    collect(&mut worker.model, arch, &worker.learner.params.values, horizon, &mut rng, false)
                })?;
                let batches = rollouts
                    .into_iter()
                    .map(|r| PreparedBatch::new(r.batch, tc.gamma, tc.lambda, tc.normalize_advantages))
                    .collect::<Result<Vec<_>>>()?;
                model_steps += (horizon * self.workers.len()) as u64;
                let shuffle = stream_seed(self.seed, iteration, 1 + m, purpose::SHUFFLE);
                diags.push(self.update(&batches, lr, shuffle)?);
            }
        }

        self.iteration += 1;
        self.env_steps += (tc.batch_size * self.workers.len()) as u64;
        self.model_steps += model_steps;

        let n_ep = episodes.len() as f64;
        let mean_ep_reward = episodes.iter().map(|e| e.total_reward).sum::<f64>() / n_ep;
        let mean_ep_len = episodes.iter().map(|e| e.length as f64).sum::<f64>() / n_ep;
        self.last_episodes = episodes;
        let phases = diags.len() as f64;
        let mean = |f: fn(&UpdateDiagnostics) -> f64| diags.iter().map(f).sum::<f64>() / phases;
        Ok(IterationReport {
            iteration: self.iteration,
            env_steps: self.env_steps,
            model_steps: self.model_steps,
            mean_ep_reward,
            mean_ep_len,
            policy_loss: mean(|d| d.policy_loss),
            value_loss: mean(|d| d.value_loss),
            kl: mean(|d| d.kl),
            clip_frac: mean(|d| d.clip_fraction),
            lr,
            wallclock_s: if self.config.run.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        })
    }

    fn run_workers<F>(&mut self, f: F) -> Result<Vec<Rollout>>
    where
        F: Fn(usize, &mut Worker, &Architecture) -> Result<Rollout> + Sync,
    {
        let arch = &self.arch;
        if self.parallel() {
            self.workers
                .par_iter_mut()
                .enumerate()
                .map(|(w, worker)| f(w, worker, arch))
                .collect()
        } else {
            self.workers
                .iter_mut()
                .enumerate()
                .map(|(w, worker)| f(w, worker, arch))
                .collect()
        }
    }

    fn update(&mut self, batches: &[PreparedBatch], lr: f64, shuffle_seed: u64) -> Result<UpdateDiagnostics> {
        let mut learners: Vec<Learner> = self.workers.iter().map(|w| w.learner.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        let cfg = self.config.train.update_config();
        let parallel = self.parallel();
        let diag = update_epochs_synced(&self.arch, batches, &mut learners, lr, &cfg, &mut rng, average_gradients, parallel)?;
        for (worker, learner) in self.workers.iter_mut().zip(learners) {
            worker.learner = learner;
        }
        Ok(diag)
    }
}

/// Result of one seed's run.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub reports: Vec<IterationReport>,
    pub error: Option<Error>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Trains every configured seed into `out/seed_<n>/`. A failing seed is
/// recorded and the remaining seeds still run.
pub fn train(config: &RunConfig, out: &FsPath) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let mut runs = Vec::new();
    for &seed in &config.train.seeds {
        let dir = out.join(format!("seed_{seed}"));
        let mut reports = Vec::new();
        let error = train_seed(config, seed, &dir, &mut reports).err();
        runs.push(SeedRun {
            seed,
            dir,
            reports,
            error,
        });
    }
    Ok(runs)
}

fn train_seed(config: &RunConfig, seed: u64, dir: &FsPath, reports: &mut Vec<IterationReport>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut trainer = Trainer::new(config.clone(), seed)?;
    let mut metrics = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    resume_into(&mut trainer, &mut metrics, dir, reports)
}

/// Continues `trainer` until its timestep budget is spent, appending metrics
/// and writing checkpoints into `dir`.
pub fn resume_into(
    trainer: &mut Trainer,
    metrics: &mut MetricsWriter,
    dir: &FsPath,
    reports: &mut Vec<IterationReport>,
) -> Result<()> {
    let every = trainer.config().train.checkpoint_every;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    while !trainer.finished() {
        let report = trainer.train_iteration()?;
        metrics.write(&report)?;
        reports.push(report);
        if every > 0 && trainer.iteration() % every == 0 {
            trainer.checkpoint().save(&ckpt_path)?;
        }
    }
    trainer.checkpoint().save(&ckpt_path)
}
