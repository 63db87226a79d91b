use std::collections::BTreeSet;

use asym_distill::belief::solve_belief_mdp;
use asym_distill::cmdp::rollout;
use asym_distill::error::Error;
use asym_distill::rl::{exact_gradient, exact_return, pg_update, run_plain_rl, run_retry, Baseline, PgConfig, RetryConfig};
use asym_distill::store::TabularPolicy;
use asym_distill::teacher::{plan_teacher, teacher_rollout_from};
use asym_distill::{make_env, ContextualMdp, EnvConfig, Observation, PrivilegedState, RngStream, SeedTree};

fn bandit() -> ContextualMdp {
    ContextualMdp::bandit(vec![1.0, 0.0], 0.99).unwrap()
}

fn pg(lr: f64, baseline: Baseline) -> PgConfig {
    PgConfig {
        learning_rate: lr,
        gamma: 0.99,
        baseline,
    }
}

#[test]
fn bandit_gradient_at_uniform() {
    let env = bandit();
    let g = exact_gradient(&env, &TabularPolicy::uniform(2)).unwrap();
    assert_eq!(g.len(), 1);
    let row = g.values().next().unwrap();
    assert!((row[0] - 0.25).abs() < 1e-12 && (row[1] + 0.25).abs() < 1e-12);
}

#[test]
fn sampled_gradient_matches_exact_on_bandit() {
    let env = bandit();
    let p = TabularPolicy::uniform(2);
    let mut rng = RngStream::from_id(99);
    let start = env.initial(0);
    let batch: Vec<_> = (0..100_000).map(|_| rollout(&env, &p, start, &mut rng).unwrap()).collect();
    let next = pg_update(&env, &p, &batch, &pg(1.0, Baseline::None)).unwrap();
    let obs = start.observation();
    let step: Vec<f64> = next.logits(&obs).unwrap().to_vec();
    // uniform logits start at zero, so the step is the estimate itself
    assert!((step[0] - 0.25).abs() < 0.05 * 0.25, "{step:?}");
    assert!((step[1] + 0.25).abs() < 0.05 * 0.25, "{step:?}");
}

#[test]
fn zero_reward_leaves_parameters_alone() {
    let env = ContextualMdp::bandit(vec![0.0, 0.0, 0.0], 0.99).unwrap();
    let p = TabularPolicy::uniform(3);
    let mut rng = RngStream::from_id(1);
    let batch: Vec<_> = (0..64).map(|_| rollout(&env, &p, env.initial(0), &mut rng).unwrap()).collect();
    let next = pg_update(&env, &p, &batch, &pg(0.5, Baseline::None)).unwrap();
    assert_eq!(next.fingerprint(), p.fingerprint());
    assert_eq!(next, p);
}

#[test]
fn stale_batch_is_refused() {
    let env = bandit();
    let p = TabularPolicy::uniform(2);
    let mut rng = RngStream::from_id(3);
    let batch: Vec<_> = (0..8).map(|_| rollout(&env, &p, env.initial(0), &mut rng).unwrap()).collect();
    let moved = pg_update(&env, &p, &batch, &pg(1.0, Baseline::MeanReturn)).unwrap();
    assert_ne!(moved.fingerprint(), p.fingerprint());
    let err = pg_update(&env, &moved, &batch, &pg(1.0, Baseline::MeanReturn)).unwrap_err();
    assert!(matches!(err, Error::OffPolicy { .. }), "{err}");
}

#[test]
fn exact_returns_of_known_policies() {
    assert!((exact_return(&bandit(), &TabularPolicy::uniform(2)).unwrap() - 0.5).abs() < 1e-12);

    let env = make_env(&EnvConfig::line_search(3)).unwrap();
    let oracle = solve_belief_mdp(&env).unwrap();
    let g: f64 = 0.99;
    let closed = (g.powi(2) + g.powi(5) + g.powi(8)) / 3.0;
    assert!((exact_return(&env, &oracle).unwrap() - closed).abs() < 1e-12);
    assert!((closed - 0.95128).abs() < 1e-5);
    assert!((exact_return(&env, &oracle.to_tabular().unwrap()).unwrap() - closed).abs() < 1e-12);

    for c in 0..3 {
        let mut cfg = EnvConfig::line_search(3);
        let mut prior = vec![0.0; 3];
        prior[c] = 1.0;
        cfg.context_prior = Some(prior);
        let env = make_env(&cfg).unwrap();
        let tp = plan_teacher(&env).unwrap();
        let v = tp.value(&env.initial(c)).unwrap();
        assert!((exact_return(&env, &tp).unwrap() - v).abs() < 1e-12);
        assert!((v - g.powi(2 * c as i32 + 2)).abs() < 1e-12);
    }
}

fn quick(iterations: usize) -> RetryConfig {
    RetryConfig {
        iterations,
        episodes_per_iter: 16,
        validation_episodes: 20,
        track_density_ratio: false,
        ..Default::default()
    }
}

#[test]
fn zero_iterations_return_the_uniform_policy() {
    let env = make_env(&EnvConfig::line_search(3)).unwrap();
    let tp = plan_teacher(&env).unwrap();
    let run = run_retry(&env, &tp, &quick(0), SeedTree::new(1)).unwrap();
    assert_eq!(run.policy, TabularPolicy::uniform(3));
    assert_eq!(run.logs.len(), 1);
    assert_eq!(run.best_iteration, 0);
}

#[test]
fn no_mixing_is_plain_rl() {
    let env = make_env(&EnvConfig::line_search(3)).unwrap();
    let tp = plan_teacher(&env).unwrap();
    let cfg = RetryConfig { mix: 0.0, ..quick(15) };
    let a = run_retry(&env, &tp, &cfg, SeedTree::new(6)).unwrap();
    let b = run_plain_rl(&env, &cfg, SeedTree::new(6)).unwrap();
    assert!(!a.pool.teacher_states.is_empty());
    assert!(b.pool.teacher_states.is_empty());
    assert_eq!(a.final_policy, b.final_policy);
    assert_eq!(a.pool.student_states, b.pool.student_states);
    let va: Vec<f64> = a.logs.iter().map(|l| l.validation_success).collect();
    let vb: Vec<f64> = b.logs.iter().map(|l| l.validation_success).collect();
    assert_eq!(va, vb);
}

#[test]
fn recovery_from_an_empty_chest() {
    let env = make_env(&EnvConfig::line_search(3)).unwrap();
    let tp = plan_teacher(&env).unwrap();
    // context 2 after opening chest 1: the teacher walks on to chest 2
    let t = teacher_rollout_from(&env, &tp, PrivilegedState::new(1, 2, 1)).unwrap();
    let obs: Vec<Observation> = t.observations().copied().collect();
    assert_eq!(obs, vec![Observation::new(2, 1), Observation::new(3, 1), Observation::new(4, 1)]);
    assert!(t.succeeded());

    let cfg = RetryConfig {
        initial_teacher_rollouts: 0,
        teacher_rollouts_per_iter: 200,
        ..quick(1)
    };
    let run = run_retry(&env, &tp, &cfg, SeedTree::new(2)).unwrap();
    let wrong_open = |s: &&PrivilegedState| s.base.node == 2 && s.base.mask == 1 && s.context != 0;
    assert!(run.pool.student_states.iter().any(|s| wrong_open(&s)));
    assert!(run.pool.teacher_states.iter().any(|s| s.base.mask == 1));

    // every teacher state lies on a teacher rollout from some student state
    let mut reachable = BTreeSet::new();
    for s in &run.pool.student_states {
        reachable.extend(teacher_rollout_from(&env, &tp, *s).unwrap().states().copied());
    }
    assert!(run.pool.teacher_states.iter().all(|s| reachable.contains(s)));
}

#[test]
fn teacher_pool_coverage_grows() {
    let env = make_env(&EnvConfig::line_search(3)).unwrap();
    let tp = plan_teacher(&env).unwrap();
    let run = run_retry(&env, &tp, &quick(10), SeedTree::new(4)).unwrap();
    let sizes: Vec<usize> = run.logs.iter().map(|l| l.dataset_size).collect();
    assert!(sizes.windows(2).all(|w| w[1] > w[0]), "{sizes:?}");
    // initial rollouts only ever see an empty mask
    assert!(run.pool.teacher_states[..sizes[0]].iter().all(|s| s.base.mask == 0));
    let covered: BTreeSet<Observation> = run.pool.teacher_states.iter().map(|s| s.observation()).collect();
    let initial: BTreeSet<Observation> = run.pool.teacher_states[..sizes[0]].iter().map(|s| s.observation()).collect();
    assert!(covered.len() > initial.len());
}
