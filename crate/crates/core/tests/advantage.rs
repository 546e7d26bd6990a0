mod common;

use common::{gae_double_sum, random_batch, rng};
use mappo::nn::Architecture;
use mappo::ppo::{
    batch_kl, batch_log_probs, clipped_objective, gae, normalize_advantages, ppo_surrogate, td_errors, update_epochs,
    Learner, PreparedBatch, TrajectoryBatch, UpdateConfig,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn gae_matches_double_sum_on_many_batches() {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = r.random_range(1..40);
        let b = random_batch(&mut r, len);
        let gamma = r.random_range(0.5..0.999);
        let lambda = r.random_range(0.0..=1.0);
        let got = gae(&b, gamma, lambda);
        for (a, o) in got.advantages.iter().zip(gae_double_sum(&b, gamma, lambda)) {
            worst = worst.max((a - o).abs());
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn eight_step_two_episode_example() {
    let mut b = random_batch(&mut rng(8), 8);
    b.dones = vec![false, false, true, false, false, false, false, false];
    b.truncated = vec![false; 8];
    b.truncated[7] = true;
    b.bootstrap_values[7] = 4.0;
    let got = gae(&b, 0.9, 0.7).advantages;
    for (a, o) in got.iter().zip(gae_double_sum(&b, 0.9, 0.7)) {
        assert!((a - o).abs() < 1e-12);
    }
}

#[test]
fn td_terminal_example() {
    let mut b = random_batch(&mut rng(1), 1);
    b.rewards = vec![59.0];
    b.values = vec![10.0];
    b.dones = vec![true];
    b.truncated = vec![false];
    assert_eq!(td_errors(&b, 0.99), vec![49.0]);
}

#[test]
fn lambda_zero_is_one_step_td() {
    let mut r = rng(3);
    for _ in 0..200 {
        let len = r.random_range(1..30);
        let b = random_batch(&mut r, len);
        assert_eq!(gae(&b, 0.99, 0.0).advantages, td_errors(&b, 0.99));
    }
}

#[test]
fn lambda_one_zero_values_is_monte_carlo() {
    let mut r = rng(4);
    for _ in 0..200 {
        let len = r.random_range(1..30);
        let mut b = random_batch(&mut r, len);
        b.values = vec![0.0; len];
        b.dones = vec![false; len];
        b.truncated = vec![false; len];
        b.dones[len - 1] = true;
        let gamma = 0.97;
        let adv = gae(&b, gamma, 1.0).advantages;
        // Discounted return, accumulated from the end of the episode.
        let mut ret = vec![0.0; len];
        let mut g = 0.0;
        for t in (0..len).rev() {
            g = b.rewards[t] + gamma * g;
            ret[t] = g;
        }
        assert_eq!(adv, ret);
        let direct: Vec<f64> = (0..len)
            .map(|t| (t..len).map(|l| gamma.powi((l - t) as i32) * b.rewards[l]).sum())
            .collect();
        for (a, d) in adv.iter().zip(direct) {
            assert!((a - d).abs() < 1e-12);
        }
    }
}

#[test]
fn targets_are_advantage_plus_value() {
    let b = random_batch(&mut rng(6), 50);
    let set = gae(&b, 0.99, 0.95);
    for ((t, a), v) in set.targets.iter().zip(&set.advantages).zip(&b.values) {
        assert_eq!(*t, a + v);
    }
}

fn episode_permuted(b: &TrajectoryBatch, order: &[usize]) -> (TrajectoryBatch, Vec<usize>) {
    let eps = b.episodes();
    let mut idx = Vec::new();
    for &e in order {
        idx.extend(eps[e].clone());
    }
    let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let pickb = |v: &Vec<bool>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let out = TrajectoryBatch {
        observations: b.observations.select(ndarray::Axis(0), &idx),
        actions: b.actions.select(ndarray::Axis(0), &idx),
        log_probs: pick(&b.log_probs),
        behavior_mean: b.behavior_mean.select(ndarray::Axis(0), &idx),
        behavior_std: b.behavior_std.select(ndarray::Axis(0), &idx),
        rewards: pick(&b.rewards),
        dones: pickb(&b.dones),
        truncated: pickb(&b.truncated),
        values: pick(&b.values),
        bootstrap_values: pick(&b.bootstrap_values),
    };
    (out, idx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gae_is_linear_in_rewards(seed in any::<u64>(), c in -5.0f64..5.0, len in 1usize..30) {
        let mut b = random_batch(&mut rng(seed), len);
        b.values = vec![0.0; len];
        b.bootstrap_values = vec![0.0; len];
        let base = gae(&b, 0.99, 0.95).advantages;
        b.rewards.iter_mut().for_each(|r| *r *= c);
        let scaled = gae(&b, 0.99, 0.95).advantages;
        for (s, a) in scaled.iter().zip(&base) {
            prop_assert!((s - c * a).abs() <= 1e-9 * (1.0 + (c * a).abs()));
        }
    }

    #[test]
    fn episodes_are_isolated(seed in any::<u64>(), len in 2usize..40) {
        let b = random_batch(&mut rng(seed), len);
        let n_eps = b.episodes().len();
        let mut order: Vec<usize> = (0..n_eps).collect();
        order.reverse();
        let (p, idx) = episode_permuted(&b, &order);
        let base = gae(&b, 0.99, 0.95).advantages;
        let perm = gae(&p, 0.99, 0.95).advantages;
        for (k, &i) in idx.iter().enumerate() {
            prop_assert_eq!(perm[k], base[i]);
        }
    }

    #[test]
    fn normalization_moments(seed in any::<u64>(), len in 2usize..200) {
        let mut r = rng(seed);
        let mut a: Vec<f64> = (0..len).map(|_| r.random_range(-100.0..100.0)).collect();
        normalize_advantages(&mut a);
        let n = len as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clip_zone_gradient_is_dead(ratio in 0.0f64..3.0, adv in -10.0f64..10.0, eps in 0.05f64..0.5) {
        let (obj, d) = clipped_objective(ratio, adv, eps);
        prop_assert!(obj <= ratio * adv + 1e-12);
        if (adv > 0.0 && ratio >= 1.0 + eps) || (adv < 0.0 && ratio <= 1.0 - eps) {
            prop_assert_eq!(d, 0.0);
        } else {
            prop_assert_eq!(d, adv);
        }
    }
}

#[test]
fn clip_arithmetic_cases() {
    let adv = 2.5;
    assert_eq!(clipped_objective(1.0, adv, 0.2), (adv, adv));
    let (obj, d) = clipped_objective(1.5, adv, 0.2);
    assert!((obj - 1.2 * adv).abs() < 1e-15);
    assert_eq!(d, 0.0);
    let (obj, d) = clipped_objective(0.5, -adv, 0.2);
    assert!((obj - 0.8 * -adv).abs() < 1e-15);
    assert_eq!(d, 0.0);
}

fn synthetic(arch: &Architecture, params: &[f64], len: usize, seed: u64) -> PreparedBatch {
    let mut r = rng(seed);
    let obs = Array2::from_shape_fn((len, arch.obs_dim), |_| r.random_range(-1.0..1.0));
    let out = arch.actor_forward_batch(params, obs.view()).unwrap();
    // Every action pushes dimension 0 up from the mean; all advantages positive.
    let mut actions = out.mean.clone();
    actions.column_mut(0).mapv_inplace(|m| m + 0.5);
    let log_probs = batch_log_probs(arch, params, obs.view(), actions.view()).unwrap();
    let batch = TrajectoryBatch {
        observations: obs,
        actions,
        log_probs,
        behavior_mean: out.mean.clone(),
        behavior_std: out.std.clone(),
        rewards: vec![1.0; len],
        dones: (0..len).map(|t| t + 1 == len).collect(),
        truncated: vec![false; len],
        values: vec![0.0; len],
        bootstrap_values: vec![0.0; len],
    };
    let mut prepared = PreparedBatch::new(batch, 0.99, 0.95, false).unwrap();
    prepared.advantages = (0..len).map(|_| r.random_range(0.5..1.5)).collect();
    prepared
}

#[test]
fn ratio_one_is_vanilla_policy_gradient() {
    let arch = Architecture::new(4, 2, &[8, 8], 0.01);
    let params = arch.init_params(&mut rng(1)).values;
    let prepared = synthetic(&arch, &params, 16, 2);
    let b = &prepared.batch;
    let out = ppo_surrogate(
        &arch,
        &params,
        b.observations.view(),
        b.actions.view(),
        &b.log_probs,
        &prepared.advantages,
        0.2,
        0.0,
    )
    .unwrap();
    let mean_adv = prepared.advantages.iter().sum::<f64>() / 16.0;
    assert!((out.loss + mean_adv).abs() < 1e-12);
    assert_eq!(out.clip_fraction, 0.0);
    let mut pg = vec![0.0; params.len()];
    for i in 0..16 {
        let (_, g) = arch
            .log_prob_gradient(&params, &b.observations.row(i).to_vec(), &b.actions.row(i).to_vec())
            .unwrap();
        pg.iter_mut().zip(g).for_each(|(p, g)| *p -= prepared.advantages[i] * g / 16.0);
    }
    for (a, e) in out.gradient.iter().zip(&pg) {
        assert!((a - e).abs() <= 1e-10 * (1.0 + e.abs()));
    }
}

#[test]
fn update_raises_log_prob_of_advantaged_actions() {
    let arch = Architecture::new(4, 2, &[16, 16], 0.01);
    let params = arch.init_params(&mut rng(3)).values;
    let prepared = synthetic(&arch, &params, 64, 4);
    let b = &prepared.batch;
    let before = batch_log_probs(&arch, &params, b.observations.view(), b.actions.view()).unwrap();
    let mut learner = Learner::new(arch.init_params(&mut rng(3)));
    let cfg = UpdateConfig {
        minibatch_size: 16,
        epochs: 4,
        ..UpdateConfig::default()
    };
    let diag = update_epochs(&arch, &prepared, &mut learner, 3e-4, &cfg, &mut rng(5)).unwrap();
    let after = batch_log_probs(&arch, &learner.params.values, b.observations.view(), b.actions.view()).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&after) > mean(&before), "{} -> {}", mean(&before), mean(&after));
    assert!(diag.kl > 0.0);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let arch = Architecture::new(4, 2, &[16, 16], 0.01);
    let init = arch.init_params(&mut rng(7));
    let prepared = synthetic(&arch, &init.values, 64, 8);
    let mut learner = Learner::new(init.clone());
    let diag = update_epochs(&arch, &prepared, &mut learner, 0.0, &UpdateConfig::default(), &mut rng(9)).unwrap();
    assert_eq!(learner.params, init);
    assert_eq!(diag.kl, 0.0);
    assert_eq!(diag.clip_fraction, 0.0);
    assert_eq!(batch_kl(&arch, &init.values, &prepared.batch).unwrap(), 0.0);
}

#[test]
fn single_epoch_full_batch_is_one_step() {
    let arch = Architecture::new(4, 2, &[8, 8], 0.01);
    let init = arch.init_params(&mut rng(10));
    let prepared = synthetic(&arch, &init.values, 32, 11);
    let cfg = UpdateConfig {
        epochs: 1,
        minibatch_size: 32,
        ..UpdateConfig::default()
    };
    let mut learner = Learner::new(init.clone());
    let diag = update_epochs(&arch, &prepared, &mut learner, 1e-3, &cfg, &mut rng(12)).unwrap();
    assert_eq!(diag.minibatches, 1);

    let b = &prepared.batch;
    let actor = ppo_surrogate(&arch, &init.values, b.observations.view(), b.actions.view(), &b.log_probs, &prepared.advantages, 0.2, 0.0).unwrap();
    let critic = mappo::ppo::critic_loss(&arch, &init.values, b.observations.view(), &prepared.targets, None, None).unwrap();
    let grad: Vec<f64> = actor.gradient.iter().zip(&critic.gradient).map(|(a, c)| a + c).collect();
    let mut expected = init.values.clone();
    let mut adam = mappo::nn::AdamState::new(expected.len());
    mappo::nn::adam_step(&mut expected, &grad, &mut adam, &cfg.adam, 1e-3).unwrap();
    for (a, e) in learner.params.values.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-15, "{a} vs {e}");
    }
}
