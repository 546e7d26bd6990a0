//! Actor and critic perceptrons over one flat parameter vector, with exact
//! backpropagation and Adam.
//!
//! The actor emits a mean and a raw scale per action dimension; the standard
//! deviation is `softplus(raw) + sigma_min`. Hidden layers use `tanh`.

use std::f64::consts::{LN_2, PI};
use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSegment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter store for both networks plus the named segment map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub values: Vec<f64>,
    pub segments: Vec<ParamSegment>,
}

impl ParameterSet {
    pub fn parameter_count(&self) -> usize {
        self.values.len()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    weight: usize,
    bias: usize,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn w<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &params[self.weight..self.weight + self.outputs * self.inputs])
            .expect("segment shape")
    }

    fn b<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.bias..self.bias + self.outputs])
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<Dense>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
struct MlpCache {
    /// `inputs[i]` is the input to layer `i`; entries past the first are tanh outputs.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Mlp {
    fn build(prefix: &str, sizes: &[usize], offset: &mut usize, segments: &mut Vec<ParamSegment>) -> Mlp {
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            let (inputs, outputs) = (pair[0], pair[1]);
            let weight = *offset;
            segments.push(ParamSegment {
                name: format!("{prefix}.{i}.weight"),
                offset: weight,
                rows: outputs,
                cols: inputs,
            });
            *offset += inputs * outputs;
            let bias = *offset;
            segments.push(ParamSegment {
                name: format!("{prefix}.{i}.bias"),
                offset: bias,
                rows: outputs,
                cols: 1,
            });
            *offset += outputs;
            layers.push(Dense {
                weight,
                bias,
                inputs,
                outputs,
            });
        }
        Mlp { layers }
    }

    fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.w(params).t());
            z += &layer.b(params);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        MlpCache { inputs, output: current }
    }

    /// Accumulates dL/dparams into `grad` given dL/doutput.
    fn backward(&self, params: &[f64], cache: &MlpCache, d_out: Array2<f64>, grad: &mut [f64]) {
        let mut dz = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            {
                let gw = &mut grad[layer.weight..layer.weight + layer.outputs * layer.inputs];
                let mut gw = ArrayViewMut2::from_shape((layer.outputs, layer.inputs), gw).expect("segment shape");
                general_mat_mul(1.0, &dz.t(), input, 1.0, &mut gw);
            }
            {
                let mut gb = ArrayViewMut1::from(&mut grad[layer.bias..layer.bias + layer.outputs]);
                gb += &dz.sum_axis(Axis(0));
            }
            if i > 0 {
                let mut dx = dz.dot(&layer.w(params));
                dx.zip_mut_with(input, |g, &a| *g *= 1.0 - a * a);
                dz = dx;
            }
        }
    }

    fn range(&self) -> Range<usize> {
        let first = self.layers.first().expect("non-empty").weight;
        let last = self.layers.last().expect("non-empty");
        first..last.bias + last.outputs
    }
}

/// Diagonal Gaussian policy head output for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Exact diagonal-Gaussian log density.
pub fn gaussian_log_prob(mean: &[f64], std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .zip(action)
        .map(|((&m, &s), &a)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// KL(old ‖ new) between diagonal Gaussians.
pub fn gaussian_kl(old_mean: &[f64], old_std: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    old_mean
        .iter()
        .zip(old_std)
        .zip(mean.iter().zip(std))
        .map(|((&m0, &s0), (&m1, &s1))| (s1 / s0).ln() + (s0 * s0 + (m0 - m1).powi(2)) / (2.0 * s1 * s1) - 0.5)
        .sum()
}

/// Samples an unclamped action and returns it with its log density.
pub fn sample_action<R: Rng + ?Sized>(policy: &GaussianPolicyOutput, rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = policy
        .mean
        .iter()
        .zip(&policy.std)
        .map(|(&m, &s)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + s * eps
        })
        .collect();
    let log_prob = gaussian_log_prob(&policy.mean, &policy.std, &action);
    (action, log_prob)
}

/// Batched actor output with the cache needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ActorBatch {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    cache: MlpCache,
}

#[derive(Debug, Clone)]
pub struct CriticBatch {
    pub values: Array1<f64>,
    cache: MlpCache,
}

/// Shapes of the actor and critic networks and where their parameters live.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub sigma_min: f64,
    actor: Mlp,
    critic: Mlp,
    segments: Vec<ParamSegment>,
    count: usize,
}

impl Architecture {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], sigma_min: f64) -> Self {
        let mut offset = 0;
        let mut segments = Vec::new();
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let actor = Mlp::build("actor", &sizes, &mut offset, &mut segments);
        *sizes.last_mut().expect("non-empty") = 1;
        let critic = Mlp::build("critic", &sizes, &mut offset, &mut segments);
        Self {
            obs_dim,
            action_dim,
            hidden: hidden.to_vec(),
            sigma_min,
            actor,
            critic,
            segments,
            count: offset,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.count
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn actor_range(&self) -> Range<usize> {
        self.actor.range()
    }

    pub fn critic_range(&self) -> Range<usize> {
        self.critic.range()
    }

    pub fn zeros(&self) -> ParameterSet {
        ParameterSet {
            values: vec![0.0; self.count],
            segments: self.segments.clone(),
        }
    }

    /// Orthogonal hidden layers (gain √2), 0.01-scaled policy output, unit-gain value output, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterSet {
        let mut params = self.zeros();
        let n_actor = self.actor.layers.len();
        for (i, layer) in self.actor.layers.iter().enumerate() {
            let gain = if i + 1 == n_actor { 0.01 } else { 2f64.sqrt() };
            orthogonal_fill(&mut params.values[layer.weight..layer.bias], layer.outputs, layer.inputs, gain, rng);
        }
        let n_critic = self.critic.layers.len();
        for (i, layer) in self.critic.layers.iter().enumerate() {
            let gain = if i + 1 == n_critic { 1.0 } else { 2f64.sqrt() };
            orthogonal_fill(&mut params.values[layer.weight..layer.bias], layer.outputs, layer.inputs, gain, rng);
        }
        params
    }

    fn check_obs(&self, obs: ArrayView2<f64>) -> Result<()> {
        if obs.ncols() != self.obs_dim {
            return Err(Error::ShapeMismatch(format!(
                "observation has {} columns, expected {}",
                obs.ncols(),
                self.obs_dim
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    pub fn actor_forward_batch(&self, params: &[f64], obs: ArrayView2<f64>) -> Result<ActorBatch> {
        self.check_obs(obs)?;
        let cache = self.actor.forward(params, obs);
        let a = self.action_dim;
        let mean = cache.output.slice(s![.., ..a]).to_owned();
        let sigma_min = self.sigma_min;
        let std = cache.output.slice(s![.., a..]).mapv(|r| softplus(r) + sigma_min);
        Ok(ActorBatch { mean, std, cache })
    }

    /// Backpropagates dL/dmean and dL/dstd into `grad`.
    pub fn actor_backward(
        &self,
        params: &[f64],
        batch: &ActorBatch,
        d_mean: ArrayView2<f64>,
        d_std: ArrayView2<f64>,
        grad: &mut [f64],
    ) {
        let a = self.action_dim;
        let rows = batch.mean.nrows();
        let mut d_out = Array2::zeros((rows, 2 * a));
        d_out.slice_mut(s![.., ..a]).assign(&d_mean);
        let raw = batch.cache.output.slice(s![.., a..]);
        let mut d_raw = d_out.slice_mut(s![.., a..]);
        ndarray::Zip::from(&mut d_raw)
            .and(&d_std)
            .and(&raw)
            .for_each(|g, &ds, &r| *g = ds * sigmoid(r));
        self.actor.backward(params, &batch.cache, d_out, grad);
    }

    pub fn critic_forward_batch(&self, params: &[f64], obs: ArrayView2<f64>) -> Result<CriticBatch> {
        self.check_obs(obs)?;
        let cache = self.critic.forward(params, obs);
        let values = cache.output.column(0).to_owned();
        Ok(CriticBatch { values, cache })
    }

    pub fn critic_backward(&self, params: &[f64], batch: &CriticBatch, d_values: ArrayView1<f64>, grad: &mut [f64]) {
        let d_out = d_values.to_owned().insert_axis(Axis(1));
        self.critic.backward(params, &batch.cache, d_out, grad);
    }

    pub fn actor_forward(&self, params: &[f64], obs: &[f64]) -> Result<GaussianPolicyOutput> {
        let view = ArrayView2::from_shape((1, obs.len()), obs)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let out = self.actor_forward_batch(params, view)?;
        Ok(GaussianPolicyOutput {
            mean: out.mean.row(0).to_vec(),
            std: out.std.row(0).to_vec(),
        })
    }

    pub fn critic_forward(&self, params: &[f64], obs: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, obs.len()), obs)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.critic_forward_batch(params, view)?.values[0])
    }

    /// Gradient of `log π(action | obs)` with respect to all parameters.
    pub fn log_prob_gradient(&self, params: &[f64], obs: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, obs.len()), obs)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let batch = self.actor_forward_batch(params, view)?;
        let mean = batch.mean.row(0);
        let std = batch.std.row(0);
        let log_prob = gaussian_log_prob(mean.as_slice().unwrap(), std.as_slice().unwrap(), action);
        let mut d_mean = Array2::zeros((1, self.action_dim));
        let mut d_std = Array2::zeros((1, self.action_dim));
        for k in 0..self.action_dim {
            let diff = action[k] - mean[k];
            let sd = std[k];
            d_mean[[0, k]] = diff / (sd * sd);
            d_std[[0, k]] = diff * diff / (sd * sd * sd) - 1.0 / sd;
        }
        let mut grad = vec![0.0; self.count];
        self.actor_backward(params, &batch, d_mean.view(), d_std.view(), &mut grad);
        Ok((log_prob, grad))
    }
}

/// Fills a row-major `rows × cols` block with a scaled (semi-)orthogonal matrix.
fn orthogonal_fill<R: Rng + ?Sized>(out: &mut [f64], rows: usize, cols: usize, gain: f64, rng: &mut R) {
    // Orthonormalize the columns of a tall Gaussian matrix, transposing if wide.
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(short);
    while q.len() < short {
        let mut v: Vec<f64> = (0..tall).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let value = if rows >= cols { q[c][r] } else { q[r][c] };
            out[r * cols + c] = gain * value;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update. A non-finite gradient leaves everything untouched.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("adam"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Differential entropy of a diagonal Gaussian.
pub fn gaussian_entropy(std: &[f64]) -> f64 {
    std.iter().map(|s| s.ln() + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
}

pub const SOFTPLUS_ZERO: f64 = LN_2;
