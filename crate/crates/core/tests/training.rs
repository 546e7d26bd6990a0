mod common;

use common::{rng, split_run_matches, tiny_config};
use mappo::trainer::{average_gradients, collect_rollout, train, Algo, Trainer, CHECKPOINT_FILE, METRICS_FILE};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn identical_workers_track_a_single_worker() {
    for algo in [Algo::Ppo, Algo::Mappo] {
        let mut single = Trainer::new(tiny_config(algo, 1, 3), 5).unwrap();
        let mut cfg = tiny_config(algo, 4, 3);
        cfg.train.shared_worker_seed = true;
        let mut many = Trainer::new(cfg, 5).unwrap();
        for _ in 0..3 {
            single.train_iteration().unwrap();
            many.train_iteration().unwrap();
            for w in 0..4 {
                assert_eq!(many.learner(w).params, single.learner(0).params, "{algo:?} worker {w}");
                assert_eq!(many.learner(w).adam, single.learner(0).adam);
            }
        }
    }
}

#[test]
fn workers_stay_synchronised() {
    let mut t = Trainer::new(tiny_config(Algo::Mappo, 4, 2), 1).unwrap();
    t.train_iteration().unwrap();
    for w in 1..4 {
        assert_eq!(t.learner(w).params, t.learner(0).params);
        assert_eq!(t.learner(w).adam, t.learner(0).adam);
    }
}

#[test]
fn average_gradients_matches_direct_mean() {
    let mut r = rng(16);
    let grads: Vec<Vec<f64>> = (0..16).map(|_| (0..50).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let avg = average_gradients(&grads).unwrap();
    for i in 0..50 {
        let direct = grads.iter().map(|g| g[i]).sum::<f64>() / 16.0;
        assert!((avg[i] - direct).abs() < 1e-15);
    }
}

#[test]
fn mappo_without_model_iterations_is_ppo() {
    let ppo = tiny_config(Algo::Ppo, 2, 3);
    let mut mappo = tiny_config(Algo::Mappo, 2, 3);
    mappo.train.model_iterations = 0;
    let a = train(&ppo, tempfile::tempdir().unwrap().path()).unwrap();
    let b = train(&mappo, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(a[0].reports, b[0].reports);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let mut cfg = tiny_config(Algo::Mappo, 2, 1);
    cfg.train.lr_start = 0.0;
    let mut t = Trainer::new(cfg, 2).unwrap();
    let before = t.learner(0).params.clone();
    t.train_iteration().unwrap();
    assert_eq!(t.learner(0).params, before);
}

#[test]
fn one_iteration_budget_and_step_accounting() {
    let cfg = tiny_config(Algo::Mappo, 2, 1);
    let out = tempfile::tempdir().unwrap();
    let runs = train(&cfg, out.path()).unwrap();
    assert_eq!(runs[0].reports.len(), 1);
    let r = runs[0].reports[0];
    assert_eq!(r.env_steps, 2 * 128);
    assert_eq!(r.model_steps, 2 * 128);
    assert!(out.path().join("seed_3").join(CHECKPOINT_FILE).exists());
}

#[test]
fn one_directory_per_seed() {
    let mut cfg = tiny_config(Algo::Ppo, 1, 1);
    cfg.train.seeds = vec![1, 2, 3, 4, 5];
    let out = tempfile::tempdir().unwrap();
    let runs = train(&cfg, out.path()).unwrap();
    assert_eq!(runs.len(), 5);
    for s in 1..=5 {
        assert!(out.path().join(format!("seed_{s}")).join(METRICS_FILE).exists());
    }
    // Different seeds, different streams.
    assert_ne!(runs[0].reports[0].mean_ep_reward, runs[1].reports[0].mean_ep_reward);
}

#[test]
fn learning_rate_is_non_increasing() {
    let cfg = tiny_config(Algo::Ppo, 1, 6);
    let runs = train(&cfg, tempfile::tempdir().unwrap().path()).unwrap();
    let lrs: Vec<f64> = runs[0].reports.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], cfg.train.lr_start);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let cfg = tiny_config(Algo::Mappo, 2, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&cfg, a.path()).unwrap();
    train(&cfg, b.path()).unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join("seed_3").join(METRICS_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn parallel_mode_matches_sequential_numerics() {
    let seq = tiny_config(Algo::Mappo, 3, 2);
    let mut par = seq.clone();
    par.run.deterministic = false;
    let a = train(&seq, tempfile::tempdir().unwrap().path()).unwrap();
    let b = train(&par, tempfile::tempdir().unwrap().path()).unwrap();
    for (x, y) in a[0].reports.iter().zip(&b[0].reports) {
        assert_eq!((x.mean_ep_reward, x.policy_loss, x.value_loss, x.kl), (y.mean_ep_reward, y.policy_loss, y.value_loss, y.kl));
    }
}

#[test]
fn resume_equals_uninterrupted() {
    assert!(split_run_matches(Algo::Mappo, 10, 5));
    assert!(split_run_matches(Algo::Ppo, 4, 1));
}

#[test]
fn rollout_bookkeeping() {
    let cfg = tiny_config(Algo::Ppo, 1, 1);
    let sim = std::sync::Arc::new(cfg.simulator().unwrap());
    let arch = cfg.architecture();
    let params = arch.init_params(&mut rng(1)).values;
    let mut env = mappo::env::IntersectionEnv::new(sim, true);
    let roll = |env: &mut mappo::env::IntersectionEnv| {
        collect_rollout(env, &arch, &params, 2048, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    };
    let a = roll(&mut env);
    let b = roll(&mut env);
    assert_eq!(a.batch.len(), 2048);
    assert_eq!(a.batch.rewards, b.batch.rewards);
    assert_eq!(a.batch.actions, b.batch.actions);
    // Batch reward = finished episodes' returns + the open tail.
    let finished: f64 = a.episodes.iter().map(|e| e.total_reward).sum();
    let finished_len: usize = a.episodes.iter().map(|e| e.length).sum();
    let tail: f64 = a.batch.rewards[finished_len..].iter().sum();
    let total: f64 = a.batch.rewards.iter().sum();
    assert!((total - (finished + tail)).abs() < 1e-9);
    assert!(a.episodes.iter().all(|e| e.collided || e.all_passed || e.time_limit));
    assert!(collect_rollout(&mut env, &arch, &params, 0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
}
