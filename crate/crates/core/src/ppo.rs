//! Advantage estimation and the clipped-surrogate update.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{adam_step, gaussian_entropy, gaussian_kl, AdamConfig, AdamState, Architecture, ParameterSet};

/// `T` transitions collected under one behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub observations: Array2<f64>,
    /// Unclamped sampled actions.
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    /// Behavior policy mean and std, kept for the KL diagnostic.
    pub behavior_mean: Array2<f64>,
    pub behavior_std: Array2<f64>,
    pub rewards: Vec<f64>,
    /// Episode ended by collision or completion: no bootstrap.
    pub dones: Vec<bool>,
    /// Episode cut by the time limit or the batch end: bootstrap from `bootstrap_values`.
    pub truncated: Vec<bool>,
    pub values: Vec<f64>,
    /// Critic value of the state after a truncated transition; zero elsewhere.
    pub bootstrap_values: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        let lens = [
            self.observations.nrows(),
            self.actions.nrows(),
            self.log_probs.len(),
            self.behavior_mean.nrows(),
            self.behavior_std.nrows(),
            self.dones.len(),
            self.truncated.len(),
            self.values.len(),
            self.bootstrap_values.len(),
        ];
        if lens.iter().any(|&l| l != t) {
            return Err(Error::ShapeMismatch(format!("ragged trajectory batch {lens:?} vs {t}")));
        }
        if let Some(i) = (0..t).find(|&i| self.dones[i] && self.truncated[i]) {
            return Err(Error::ShapeMismatch(format!("transition {i} both done and truncated")));
        }
        if t > 0 && !(self.dones[t - 1] || self.truncated[t - 1]) {
            return Err(Error::ShapeMismatch("last transition has no episode boundary".into()));
        }
        Ok(())
    }

    /// Boundaries as half-open `[start, end)` index ranges, one per episode segment.
    pub fn episodes(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for t in 0..self.len() {
            if self.dones[t] || self.truncated[t] {
                out.push(start..t + 1);
                start = t + 1;
            }
        }
        out
    }
}

/// Advantages and TD(λ) value targets; `targets[t] = advantages[t] + values[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

pub fn td_errors(batch: &TrajectoryBatch, gamma: f64) -> Vec<f64> {
    let t_len = batch.len();
    (0..t_len)
        .map(|t| {
            let next = if batch.dones[t] {
                0.0
            } else if batch.truncated[t] {
                batch.bootstrap_values[t]
            } else {
                batch.values[t + 1]
            };
            batch.rewards[t] + gamma * next - batch.values[t]
        })
        .collect()
}

/// Generalized advantage estimation by the backward recursion, reset at episode boundaries.
pub fn gae(batch: &TrajectoryBatch, gamma: f64, lambda: f64) -> AdvantageSet {
    let deltas = td_errors(batch, gamma);
    let mut advantages = vec![0.0; deltas.len()];
    let mut running = 0.0;
    for t in (0..deltas.len()).rev() {
        if batch.dones[t] || batch.truncated[t] {
            running = 0.0;
        }
        running = deltas[t] + gamma * lambda * running;
        advantages[t] = running;
    }
    let targets = advantages.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    AdvantageSet { advantages, targets }
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { std } else { 1.0 };
    adv.iter_mut().for_each(|a| *a = (*a - mean) / scale);
}

/// A batch with the advantages and targets the update consumes.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub batch: TrajectoryBatch,
    /// Advantages fed to the surrogate (normalized if requested).
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

impl PreparedBatch {
    pub fn new(batch: TrajectoryBatch, gamma: f64, lambda: f64, normalize: bool) -> Result<Self> {
        batch.validate()?;
        let AdvantageSet { mut advantages, targets } = gae(&batch, gamma, lambda);
        if normalize {
            normalize_advantages(&mut advantages);
        }
        Ok(Self {
            batch,
            advantages,
            targets,
        })
    }
}

/// Per-sample clipped objective and its derivative with respect to the ratio.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// Fraction of samples whose ratio left `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
}

/// Negative mean clipped surrogate over a minibatch, minus an optional entropy bonus.
#[allow(clippy::too_many_arguments)]
pub fn ppo_surrogate(
    arch: &Architecture,
    params: &[f64],
    observations: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    eps: f64,
    entropy_coef: f64,
) -> Result<LossOutput> {
    let rows = observations.nrows();
    let out = arch.actor_forward_batch(params, observations)?;
    let n = rows as f64;
    let mut d_mean = Array2::zeros(out.mean.raw_dim());
    let mut d_std = Array2::zeros(out.std.raw_dim());
    let mut loss = 0.0;
    let mut clipped = 0usize;
    for i in 0..rows {
        let mean = out.mean.row(i);
        let std = out.std.row(i);
        let act = actions.row(i);
        let mut log_prob = 0.0;
        for k in 0..arch.action_dim {
            let z = (act[k] - mean[k]) / std[k];
            log_prob += -0.5 * z * z - std[k].ln();
        }
        log_prob -= 0.918_938_533_204_672_8 * arch.action_dim as f64;
        let log_ratio = log_prob - old_log_probs[i];
        let ratio = log_ratio.exp();
        if !ratio.is_finite() {
            return Err(Error::NonFiniteRatio { index: i, log_ratio });
        }
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        let (obj, d_obj_d_ratio) = clipped_objective(ratio, advantages[i], eps);
        loss -= obj / n;
        // dL/dlogπ = -(1/n) dobj/dρ · ρ
        let coef = -d_obj_d_ratio * ratio / n;
        for k in 0..arch.action_dim {
            let diff = act[k] - mean[k];
            let sd = std[k];
            d_mean[[i, k]] = coef * diff / (sd * sd);
            d_std[[i, k]] = coef * (diff * diff / (sd * sd * sd) - 1.0 / sd);
        }
        if entropy_coef != 0.0 {
            let ent = gaussian_entropy(std.as_slice().expect("contiguous"));
            loss -= entropy_coef * ent / n;
            for k in 0..arch.action_dim {
                d_std[[i, k]] -= entropy_coef / (n * std[k]);
            }
        }
    }
    let mut gradient = vec![0.0; arch.parameter_count()];
    arch.actor_backward(params, &out, d_mean.view(), d_std.view(), &mut gradient);
    Ok(LossOutput {
        loss,
        gradient,
        clip_fraction: clipped as f64 / n,
    })
}

/// Mean squared error between the critic and its targets. With `value_clip`,
/// the larger of the clipped and unclipped errors around `old_values` is used.
pub fn critic_loss(
    arch: &Architecture,
    params: &[f64],
    observations: ArrayView2<f64>,
    targets: &[f64],
    old_values: Option<&[f64]>,
    value_clip: Option<f64>,
) -> Result<LossOutput> {
    let out = arch.critic_forward_batch(params, observations)?;
    let n = targets.len() as f64;
    let mut d_values = ndarray::Array1::zeros(targets.len());
    let mut loss = 0.0;
    let mut clipped = 0usize;
    for (i, (&v, &target)) in out.values.iter().zip(targets).enumerate() {
        let mut err = v - target;
        let mut slope = 1.0;
        if let (Some(c), Some(old)) = (value_clip, old_values) {
            let v_clip = old[i] + (v - old[i]).clamp(-c, c);
            let err_clip = v_clip - target;
            if err_clip * err_clip > err * err {
                clipped += 1;
                err = err_clip;
                slope = if (v - old[i]).abs() < c { 1.0 } else { 0.0 };
            }
        }
        loss += err * err / n;
        d_values[i] = 2.0 * err * slope / n;
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("critic"));
    }
    let mut gradient = vec![0.0; arch.parameter_count()];
    arch.critic_backward(params, &out, d_values.view(), &mut gradient);
    Ok(LossOutput {
        loss,
        gradient,
        clip_fraction: clipped as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_clip: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            minibatch_size: 64,
            clip_eps: 0.2,
            entropy_coef: 0.0,
            value_clip: None,
            max_grad_norm: None,
            adam: AdamConfig::default(),
        }
    }
}

/// Parameters and optimizer moments of one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub params: ParameterSet,
    pub adam: AdamState,
}

impl Learner {
    pub fn new(params: ParameterSet) -> Self {
        let adam = AdamState::new(params.parameter_count());
        Self { params, adam }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean KL(π_old ‖ π) over the batch after the last epoch.
    pub kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Loss and gradient of one worker on one minibatch.
fn minibatch_gradient(
    arch: &Architecture,
    params: &[f64],
    prepared: &PreparedBatch,
    idx: &[usize],
    cfg: &UpdateConfig,
) -> Result<(Vec<f64>, f64, f64, f64)> {
    let b = &prepared.batch;
    let obs = b.observations.select(Axis(0), idx);
    let act = b.actions.select(Axis(0), idx);
    let old_lp: Vec<f64> = idx.iter().map(|&i| b.log_probs[i]).collect();
    let adv: Vec<f64> = idx.iter().map(|&i| prepared.advantages[i]).collect();
    let targets: Vec<f64> = idx.iter().map(|&i| prepared.targets[i]).collect();
    let old_values: Vec<f64> = idx.iter().map(|&i| b.values[i]).collect();
    let actor = ppo_surrogate(arch, params, obs.view(), act.view(), &old_lp, &adv, cfg.clip_eps, cfg.entropy_coef)?;
    let critic = critic_loss(arch, params, obs.view(), &targets, Some(&old_values), cfg.value_clip)?;
    let mut grad = actor.gradient;
    for i in arch.critic_range() {
        grad[i] += critic.gradient[i];
    }
    Ok((grad, actor.loss, critic.loss, actor.clip_fraction))
}

/// Mean KL(behavior ‖ current) over a batch.
pub fn batch_kl(arch: &Architecture, params: &[f64], batch: &TrajectoryBatch) -> Result<f64> {
    let out = arch.actor_forward_batch(params, batch.observations.view())?;
    let total: f64 = (0..batch.len())
        .map(|i| {
            let row = |a: &Array2<f64>| a.row(i).to_vec();
            gaussian_kl(&row(&batch.behavior_mean), &row(&batch.behavior_std), &row(&out.mean), &row(&out.std))
        })
        .sum();
    Ok(total / batch.len().max(1) as f64)
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

/// `U` epochs of shuffled minibatch updates for a single learner.
pub fn update_epochs<R: Rng + ?Sized>(
    arch: &Architecture,
    prepared: &PreparedBatch,
    learner: &mut Learner,
    lr: f64,
    cfg: &UpdateConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics> {
    update_epochs_synced(
        arch,
        std::slice::from_ref(prepared),
        std::slice::from_mut(learner),
        lr,
        cfg,
        rng,
        |grads| Ok(grads[0].clone()),
        false,
    )
}

/// Lock-step update across workers: every minibatch, each worker computes a
/// local gradient on its own batch at the shared shuffled indices, `reduce`
/// combines them, and every worker applies the combined gradient through its
/// own Adam state.
#[allow(clippy::too_many_arguments)]
pub fn update_epochs_synced<R, F>(
    arch: &Architecture,
    batches: &[PreparedBatch],
    learners: &mut [Learner],
    lr: f64,
    cfg: &UpdateConfig,
    rng: &mut R,
    reduce: F,
    parallel: bool,
) -> Result<UpdateDiagnostics>
where
    R: Rng + ?Sized,
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    if batches.len() != learners.len() || batches.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} batches for {} learners",
            batches.len(),
            learners.len()
        )));
    }
    let t_len = batches[0].batch.len();
    if batches.iter().any(|b| b.batch.len() != t_len) {
        return Err(Error::ShapeMismatch("worker batches differ in length".into()));
    }
    if cfg.minibatch_size == 0 || t_len % cfg.minibatch_size != 0 {
        return Err(Error::ShapeMismatch(format!(
            "batch size {t_len} not divisible by minibatch size {}",
            cfg.minibatch_size
        )));
    }

    let mut order: Vec<usize> = (0..t_len).collect();
    let mut diag = UpdateDiagnostics::default();
    let workers = batches.len() as f64;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let compute = |(prepared, learner): (&PreparedBatch, &Learner)| {
                minibatch_gradient(arch, &learner.params.values, prepared, idx, cfg)
            };
            let local: Vec<_> = if parallel {
                batches
                    .par_iter()
                    .zip(learners.par_iter())
                    .map(compute)
                    .collect::<Result<_>>()?
            } else {
                batches.iter().zip(learners.iter()).map(compute).collect::<Result<_>>()?
            };
            let mut grads = Vec::with_capacity(local.len());
            for (g, pl, vl, cf) in local {
                diag.policy_loss += pl / workers;
                diag.value_loss += vl / workers;
                diag.clip_fraction += cf / workers;
                grads.push(g);
            }
            let mut global = reduce(&grads)?;
            if let Some(max_norm) = cfg.max_grad_norm {
                clip_norm(&mut global, max_norm);
            }
            for learner in learners.iter_mut() {
                adam_step(&mut learner.params.values, &global, &mut learner.adam, &cfg.adam, lr)?;
            }
            diag.minibatches += 1;
        }
    }
    if diag.minibatches > 0 {
        let m = diag.minibatches as f64;
        diag.policy_loss /= m;
        diag.value_loss /= m;
        diag.clip_fraction /= m;
    }
    let mut kl = 0.0;
    for (prepared, learner) in batches.iter().zip(learners.iter()) {
        kl += batch_kl(arch, &learner.params.values, &prepared.batch)? / workers;
    }
    diag.kl = kl;
    if !(diag.policy_loss.is_finite() && diag.value_loss.is_finite()) {
        return Err(Error::NonFiniteLoss("update"));
    }
    Ok(diag)
}

/// Log-probabilities of the batch actions under `params`.
pub fn batch_log_probs(arch: &Architecture, params: &[f64], obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>> {
    let out = arch.actor_forward_batch(params, obs)?;
    Ok((0..obs.nrows())
        .map(|i| {
            let lp = |m: ArrayView1<f64>, s: ArrayView1<f64>, a: ArrayView1<f64>| {
                crate::nn::gaussian_log_prob(m.as_slice().unwrap(), s.as_slice().unwrap(), &a.to_vec())
            };
            lp(out.mean.row(i), out.std.row(i), actions.row(i))
        })
        .collect())
}
