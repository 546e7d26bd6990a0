//! Episodic multi-vehicle intersection environment.
//!
//! Each controlled vehicle is reduced to its signed distance `d` to the
//! center of its path and its speed `v`. The action is one longitudinal
//! acceleration per vehicle.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intersection, Pose, VehicleType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Controlled vehicles in observation order, at most one per type.
    pub vehicles: Vec<VehicleType>,
    pub dt: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub v_init_min: f64,
    pub v_init_max: f64,
    pub d_init_min: f64,
    pub d_init_max: f64,
    /// Minimum initial separation in `d` between vehicles sharing an entrance.
    pub gap_min: f64,
    /// A vehicle counts as passed once `d <= -d_pass`.
    pub d_pass: f64,
    pub vehicle_radius: f64,
    /// Standard deviation of the actuation noise, m/s².
    pub noise_std: f64,
    pub max_steps: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            vehicles: VehicleType::EXPERIMENT_MODES.to_vec(),
            dt: 0.1,
            a_min: -3.0,
            a_max: 3.0,
            v_max: 15.0,
            v_init_min: 3.0,
            v_init_max: 8.0,
            d_init_min: 30.0,
            d_init_max: 50.0,
            gap_min: 8.0,
            d_pass: 15.0,
            vehicle_radius: 1.25,
            noise_std: 0.1,
            max_steps: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardTable {
    pub collision: f64,
    pub step: f64,
    pub vehicle_pass: f64,
    pub all_pass: f64,
}

impl Default for RewardTable {
    fn default() -> Self {
        Self {
            collision: -50.0,
            step: -1.0,
            vehicle_pass: 10.0,
            all_pass: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleKinematicState {
    pub vehicle_type: VehicleType,
    pub d: f64,
    pub v: f64,
    pub passed: bool,
    pub collided: bool,
}

impl VehicleKinematicState {
    pub fn active(&self) -> bool {
        !self.passed && !self.collided
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub vehicles: Vec<VehicleKinematicState>,
    pub step_count: u32,
    pub terminated: bool,
}

impl EnvState {
    pub fn all_passed(&self) -> bool {
        self.vehicles.iter().all(|v| v.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    Collision(VehicleType, VehicleType),
    VehiclePassed(VehicleType),
    AllPassed,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub events: Vec<StepEvent>,
    /// Accelerations after clamping, before noise.
    pub applied_action: Vec<f64>,
}

impl StepOutcome {
    pub fn collided(&self) -> bool {
        self.events.iter().any(|e| matches!(e, StepEvent::Collision(..)))
    }

    pub fn all_passed(&self) -> bool {
        self.events.contains(&StepEvent::AllPassed)
    }

    pub fn time_limit(&self) -> bool {
        self.events.contains(&StepEvent::TimeLimit)
    }

    /// Terminated by collision or completion, as opposed to a time-limit cut.
    pub fn terminal(&self) -> bool {
        self.collided() || self.all_passed()
    }
}

impl EnvConfig {
    pub fn validate(&self, intersection: &Intersection) -> Result<()> {
        let key = |k: &str| format!("env.{k}");
        if self.vehicles.is_empty() {
            return Err(Error::config(key("vehicles"), "at least one vehicle is required"));
        }
        for (i, t) in self.vehicles.iter().enumerate() {
            if self.vehicles[..i].contains(t) {
                return Err(Error::config(key("vehicles"), format!("duplicate vehicle type {t}")));
            }
        }
        let positive = [
            ("dt", self.dt),
            ("a_max", self.a_max),
            ("v_max", self.v_max),
            ("d_pass", self.d_pass),
            ("vehicle_radius", self.vehicle_radius),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key(k), format!("must be positive, got {v}")));
            }
        }
        let non_negative = [("gap_min", self.gap_min), ("noise_std", self.noise_std), ("v_init_min", self.v_init_min)];
        for (k, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key(k), format!("must be non-negative, got {v}")));
            }
        }
        if !(self.a_min.is_finite() && self.a_min < 0.0) {
            return Err(Error::config(key("a_min"), "must be negative"));
        }
        if self.max_steps == 0 {
            return Err(Error::config(key("max_steps"), "must be positive"));
        }
        if !(self.v_init_max >= self.v_init_min && self.v_init_max <= self.v_max) {
            return Err(Error::config(key("v_init_max"), "must lie in [v_init_min, v_max]"));
        }
        if !(self.d_init_min > 0.0 && self.d_init_max >= self.d_init_min) {
            return Err(Error::config(key("d_init_min"), "need 0 < d_init_min <= d_init_max"));
        }
        for &t in &self.vehicles {
            let path = intersection.path(t);
            if -self.d_pass < path.d_min() {
                return Err(Error::config(key("d_pass"), format!("beyond the end of the {t} path")));
            }
            let same_entrance = self.vehicles.iter().filter(|o| o.entrance() == t.entrance()).count();
            let span = self.d_init_max.min(path.d_max()) - self.d_init_min;
            if span < 0.0 || span < 2.0 * self.gap_min * (same_entrance - 1) as f64 {
                return Err(Error::config(
                    key("d_init_min"),
                    format!("initial range too narrow for {same_entrance} vehicles on the {t} entrance"),
                ));
            }
        }
        Ok(())
    }
}

/// Shared, immutable step logic. Noise is injected by the caller.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub intersection: Arc<Intersection>,
    pub config: EnvConfig,
    pub rewards: RewardTable,
}

impl Simulator {
    pub fn new(intersection: Arc<Intersection>, config: EnvConfig, rewards: RewardTable) -> Result<Self> {
        config.validate(&intersection)?;
        Ok(Self {
            intersection,
            config,
            rewards,
        })
    }

    pub fn num_vehicles(&self) -> usize {
        self.config.vehicles.len()
    }

    pub fn observation_dim(&self) -> usize {
        2 * self.num_vehicles()
    }

    /// Initial state fully determined by `seed`.
    pub fn reset(&self, seed: u64) -> EnvState {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.vehicles.len();
        let mut d = vec![0.0; n];
        for (i, &t) in cfg.vehicles.iter().enumerate() {
            let hi = cfg.d_init_max.min(self.intersection.path(t).d_max());
            loop {
                let candidate = if hi > cfg.d_init_min {
                    rng.random_range(cfg.d_init_min..=hi)
                } else {
                    hi
                };
                let clear = cfg.vehicles[..i]
                    .iter()
                    .zip(&d)
                    .filter(|(o, _)| o.entrance() == t.entrance())
                    .all(|(_, &od)| (od - candidate).abs() >= cfg.gap_min);
                if clear {
                    d[i] = candidate;
                    break;
                }
            }
        }
        let vehicles = cfg
            .vehicles
            .iter()
            .zip(d)
            .map(|(&vehicle_type, d)| {
                let v = if cfg.v_init_max > cfg.v_init_min {
                    rng.random_range(cfg.v_init_min..=cfg.v_init_max)
                } else {
                    cfg.v_init_min
                };
                VehicleKinematicState {
                    vehicle_type,
                    d,
                    v,
                    passed: false,
                    collided: false,
                }
            })
            .collect();
        EnvState {
            vehicles,
            step_count: 0,
            terminated: false,
        }
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        let zone = self.intersection.layout.zone_radius;
        state
            .vehicles
            .iter()
            .flat_map(|v| [v.d / zone, v.v / self.config.v_max])
            .collect()
    }

    pub fn poses(&self, state: &EnvState) -> Result<Vec<Pose>> {
        state
            .vehicles
            .iter()
            .map(|v| self.intersection.path(v.vehicle_type).position(v.d))
            .collect()
    }

    /// Pairs of non-passed vehicles whose footprint discs overlap.
    pub fn detect_collisions(&self, state: &EnvState) -> Result<Vec<(VehicleType, VehicleType)>> {
        let limit = 2.0 * self.config.vehicle_radius;
        let live: Vec<(VehicleType, Pose)> = state
            .vehicles
            .iter()
            .filter(|v| !v.passed)
            .map(|v| Ok((v.vehicle_type, self.intersection.path(v.vehicle_type).position(v.d)?)))
            .collect::<Result<_>>()?;
        let mut pairs = Vec::new();
        for (i, (ta, pa)) in live.iter().enumerate() {
            for (tb, pb) in &live[i + 1..] {
                if pa.distance(pb) < limit {
                    pairs.push((*ta, *tb));
                }
            }
        }
        Ok(pairs)
    }

    /// Advances one control period. `noise` supplies actuation noise; `None` is the mean dynamics.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        action: &[f64],
        mut noise: Option<&mut R>,
    ) -> Result<(EnvState, StepOutcome)> {
        if state.terminated {
            return Err(Error::EpisodeDone);
        }
        let cfg = &self.config;
        if action.len() != state.vehicles.len() {
            return Err(Error::ActionShape {
                expected: state.vehicles.len(),
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let normal = match noise {
            Some(_) if cfg.noise_std > 0.0 => Some(Normal::new(0.0, cfg.noise_std).expect("validated std")),
            _ => None,
        };

        let dt = cfg.dt;
        let mut next = state.clone();
        let mut events = Vec::new();
        let mut applied_action = Vec::with_capacity(action.len());
        for (veh, &a) in next.vehicles.iter_mut().zip(action) {
            let commanded = a.clamp(cfg.a_min, cfg.a_max);
            applied_action.push(commanded);
            if !veh.active() {
                continue;
            }
            let mut accel = commanded;
            if let (Some(rng), Some(dist)) = (noise.as_deref_mut(), normal.as_ref()) {
                accel += dist.sample(rng);
            }
            let displacement = (veh.v * dt + 0.5 * accel * dt * dt).max(0.0);
            veh.v = (veh.v + accel * dt).clamp(0.0, cfg.v_max);
            veh.d -= displacement;
            if veh.d <= -cfg.d_pass {
                veh.d = -cfg.d_pass;
                veh.passed = true;
                events.push(StepEvent::VehiclePassed(veh.vehicle_type));
            }
        }

        let newly_passed = events.len();
        let collisions = self.detect_collisions(&next)?;
        for &(a, b) in &collisions {
            for veh in next.vehicles.iter_mut().filter(|v| v.vehicle_type == a || v.vehicle_type == b) {
                veh.collided = true;
            }
            events.push(StepEvent::Collision(a, b));
        }

        let mut reward = self.rewards.step + self.rewards.vehicle_pass * newly_passed as f64;
        let all_passed = next.all_passed();
        if all_passed {
            reward += self.rewards.all_pass;
            events.push(StepEvent::AllPassed);
        }
        if !collisions.is_empty() {
            reward += self.rewards.collision;
        }

        next.step_count += 1;
        if next.step_count >= cfg.max_steps {
            events.push(StepEvent::TimeLimit);
        }
        let done = !collisions.is_empty() || all_passed || next.step_count >= cfg.max_steps;
        next.terminated = done;

        let outcome = StepOutcome {
            observation: self.observe(&next),
            reward,
            done,
            events,
            applied_action,
        };
        Ok((next, outcome))
    }
}

/// Stateful environment instance owning its noise stream. One per worker.
#[derive(Debug, Clone)]
pub struct IntersectionEnv {
    sim: Arc<Simulator>,
    noise_rng: ChaCha8Rng,
    noise_on: bool,
    state: EnvState,
}

impl IntersectionEnv {
    pub fn new(sim: Arc<Simulator>, noise_on: bool) -> Self {
        let state = sim.reset(0);
        Self {
            sim,
            noise_rng: ChaCha8Rng::seed_from_u64(0),
            noise_on,
            state,
        }
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Starts a new episode; initial state and noise stream both follow from `seed`.
    pub fn reset(&mut self, seed: u64) -> (EnvState, Vec<f64>) {
        self.state = self.sim.reset(seed);
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        seeder.set_stream(1);
        self.noise_rng = ChaCha8Rng::seed_from_u64(seeder.next_u64());
        (self.state.clone(), self.sim.observe(&self.state))
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let noise = if self.noise_on { Some(&mut self.noise_rng) } else { None };
        let (next, outcome) = self.sim.step(&self.state, action, noise)?;
        self.state = next;
        Ok(outcome)
    }
}
