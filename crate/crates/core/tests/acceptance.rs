//! Exit criteria for the whole crate. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use asym_distill::belief::{necessary_condition_times, oracle_critical_states, solve_belief_mdp};
use asym_distill::cmdp::{rollout, Observation, Trajectory};
use asym_distill::harness::{deterministic_success, load_run, run_experiment, ExperimentConfig, LoadedRun, Method};
use asym_distill::il::{run_bc, select_queries, DEFAULT_RIDGE};
use asym_distill::metrics::{delta_curve, ExplorationHistogram, ExplorationLevel, IterationLog};
use asym_distill::rl::{exact_gradient, exact_return, pg_update, Baseline, PgConfig};
use asym_distill::store::{train_discriminator, AggDataset, Discriminator, Record, TabularPolicy};
use asym_distill::teacher::{plan_teacher, teacher_rollout_from};
use asym_distill::{make_env, ContextualMdp, EnvConfig, RngStream, SeedTree};
use common::Expectimax;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn line_search_3() -> ContextualMdp {
    make_env(&EnvConfig::line_search(3)).unwrap()
}

// 1
fn oracle_correctness() -> Verdict {
    let env = line_search_3();
    let start = Instant::now();
    let oracle = solve_belief_mdp(&env).unwrap();
    let success = deterministic_success(&env, &oracle).unwrap();
    let elapsed = start.elapsed();
    let reference = Expectimax::root(&env);
    let gap = (oracle.j_opt - reference).abs();
    verdict(
        gap <= 1e-9 && success == 1.0 && elapsed < Duration::from_secs(5),
        format!("J_opt {:.12}, expectimax {reference:.12}, gap {gap:.1e}, success {success}, {elapsed:.2?}", oracle.j_opt),
    )
}

/// Harness runs shared by the training criteria.
struct Runs {
    bc: LoadedRun,
    dagger: LoadedRun,
    critiq: LoadedRun,
    retry: LoadedRun,
    plain: LoadedRun,
    push_plain: LoadedRun,
    elapsed: Duration,
}

fn harness_run(method: Method, env: EnvConfig, out: &Path) -> LoadedRun {
    let mut cfg = ExperimentConfig::new(method, env);
    cfg.out = out.to_path_buf();
    run_experiment(&cfg).unwrap();
    load_run(out).unwrap()
}

fn train_all(root: &Path) -> Runs {
    let start = Instant::now();
    let ls = EnvConfig::line_search(3);
    let bc = harness_run(Method::Bc, ls.clone(), &root.join("bc"));
    let dagger = harness_run(Method::Dagger, ls.clone(), &root.join("dagger"));
    let critiq = harness_run(Method::Critiq, ls.clone(), &root.join("critiq"));
    let retry = harness_run(Method::Retry, ls.clone(), &root.join("retry"));
    let plain = harness_run(Method::PlainRl, ls, &root.join("plain_rl"));
    let elapsed = start.elapsed();
    let push_plain = harness_run(Method::PlainRl, EnvConfig::push_line(3), &root.join("push_plain_rl"));
    Runs {
        bc,
        dagger,
        critiq,
        retry,
        plain,
        push_plain,
        elapsed,
    }
}

fn logs(run: &LoadedRun, seed: u64) -> Vec<IterationLog> {
    run.logs[&seed].iter().map(|r| r.log.clone()).collect()
}

fn mean_success(run: &LoadedRun) -> f64 {
    run.rows.iter().map(|r| r.success_rate).sum::<f64>() / run.rows.len() as f64
}

// 2
fn delta_monotone(runs: &Runs) -> Verdict {
    let mut broken = Vec::new();
    for &seed in &runs.dagger.manifest.seeds {
        let l = logs(&runs.dagger, seed);
        assert_eq!(l.len(), 11);
        if !delta_curve(&l).non_decreasing {
            let trace: Vec<String> = l
                .iter()
                .map(|x| format!("{}/{}", x.delta_disagreements.unwrap(), x.dataset_size))
                .collect();
            broken.push(format!("seed {seed}: {}", trace.join(" ")));
        }
    }
    let n = runs.dagger.manifest.seeds.len();
    verdict(
        broken.is_empty(),
        if broken.is_empty() {
            format!("non-decreasing in {n}/{n} runs")
        } else {
            format!("decreases in {}/{n} runs; {}", broken.len(), broken.join("; "))
        },
    )
}

// 3
fn critiq_vs_dagger(runs: &Runs) -> Verdict {
    let seeds = &runs.dagger.manifest.seeds;
    let mut fewer_every_iter = 0;
    let mut lower_delta = 0;
    let mut notes = Vec::new();
    for &seed in seeds {
        let d = logs(&runs.dagger, seed);
        let c = logs(&runs.critiq, seed);
        assert_eq!(d.len(), c.len());
        let worse: Vec<usize> = (2..d.len()).filter(|&i| c[i].queries_made >= d[i].queries_made).collect();
        if worse.is_empty() {
            fewer_every_iter += 1;
        } else {
            notes.push(format!("seed {seed} not fewer at {worse:?}"));
        }
        let (cl, dl) = (c.last().unwrap(), d.last().unwrap());
        let lower = u128::from(cl.delta_disagreements.unwrap()) * (dl.dataset_size as u128)
            < u128::from(dl.delta_disagreements.unwrap()) * (cl.dataset_size as u128);
        lower_delta += usize::from(lower);
    }
    let n = seeds.len();
    verdict(
        fewer_every_iter == n && lower_delta >= 4,
        format!(
            "fewer queries in every iteration after the first: {fewer_every_iter}/{n} seeds; lower final delta: {lower_delta}/{n}{}",
            if notes.is_empty() { String::new() } else { format!(" ({})", notes.join("; ")) }
        ),
    )
}

// 4
fn success_trends(runs: &Runs) -> Verdict {
    let (bc, dagger, critiq, retry, plain) = (
        mean_success(&runs.bc),
        mean_success(&runs.dagger),
        mean_success(&runs.critiq),
        mean_success(&runs.retry),
        mean_success(&runs.plain),
    );
    let push = mean_success(&runs.push_plain);
    let checks = [
        ("retry>=0.95", retry >= 0.95),
        ("critiq>=0.70", critiq >= 0.70),
        ("bc<=0.60", bc <= 0.60),
        ("dagger<=bc+0.05", dagger <= bc + 0.05),
        ("plain_rl<=retry-0.20", plain <= retry - 0.20),
        ("push_line plain_rl>0", push > 0.0),
        ("budget<=10min", runs.elapsed <= Duration::from_secs(600)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "bc {bc:.3} dagger {dagger:.3} critiq {critiq:.3} retry {retry:.3} plain_rl {plain:.3} push_line plain_rl {push:.3} in {:.1?}{}",
            runs.elapsed,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn final_third_modal(l: &[IterationLog]) -> ExplorationLevel {
    let n = l.len() - 1;
    let mut h = ExplorationHistogram::default();
    for x in l.iter().filter(|x| x.iteration > 0 && 3 * x.iteration > 2 * n) {
        for level in ExplorationLevel::ALL {
            for _ in 0..x.exploration.count(level) {
                h.add(level);
            }
        }
    }
    h.modal()
}

// 5
fn exploration_levels(runs: &Runs) -> Verdict {
    let seeds = &runs.retry.manifest.seeds;
    let retry: Vec<ExplorationLevel> = seeds.iter().map(|&s| final_third_modal(&logs(&runs.retry, s))).collect();
    let plain: Vec<ExplorationLevel> = seeds.iter().map(|&s| final_third_modal(&logs(&runs.plain, s))).collect();
    let high = retry.iter().filter(|l| **l == ExplorationLevel::High).count();
    let none = plain.iter().filter(|l| **l == ExplorationLevel::None).count();
    verdict(
        high >= 4 && none == plain.len(),
        format!("retry modal High in {high}/{} seeds {retry:?}; plain_rl modal None in {none}/{} seeds {plain:?}", seeds.len(), seeds.len()),
    )
}

// 6
fn fd_worst(env: &ContextualMdp, policy: &TabularPolicy) -> (f64, usize) {
    let h = 1e-5;
    let analytic = exact_gradient(env, policy).unwrap();
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for (obs, g) in &analytic {
        let row = policy.logits(obs).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; env.num_actions()]);
        for j in 0..env.num_actions() {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            let mut r = row.clone();
            r[j] += h;
            plus.set_logits(*obs, r.clone());
            r[j] -= 2.0 * h;
            minus.set_logits(*obs, r);
            let fd = (exact_return(env, &plus).unwrap() - exact_return(env, &minus).unwrap()) / (2.0 * h);
            let scale = g[j].abs().max(fd.abs());
            if scale > 0.0 {
                worst = worst.max((g[j] - fd).abs() / scale);
            }
            coords += 1;
        }
    }
    (worst, coords)
}

fn random_policy(env: &ContextualMdp, observations: &[Observation], rng: &mut RngStream) -> TabularPolicy {
    let mut p = TabularPolicy::uniform(env.num_actions());
    for o in observations {
        p.set_logits(*o, (0..env.num_actions()).map(|_| 2.0 * rng.uniform() - 1.0).collect());
    }
    p
}

fn gradient_check() -> Verdict {
    let bandit = ContextualMdp::bandit(vec![1.0, 0.0], 0.99).unwrap();
    let ls2 = make_env(&EnvConfig::line_search(2)).unwrap();
    let mut rng = RngStream::from_id(6);
    let ls2_obs: Vec<Observation> = exact_gradient(&ls2, &TabularPolicy::uniform(3)).unwrap().into_keys().collect();
    let cases = [
        ("bandit uniform", &bandit, TabularPolicy::uniform(2)),
        ("bandit random", &bandit, random_policy(&bandit, &[bandit.initial(0).observation()], &mut rng)),
        ("line_search:2 uniform", &ls2, TabularPolicy::uniform(3)),
        ("line_search:2 random", &ls2, random_policy(&ls2, &ls2_obs, &mut rng)),
    ];
    let mut fd_ok = true;
    let mut notes = Vec::new();
    for (name, env, p) in &cases {
        let (worst, coords) = fd_worst(env, p);
        fd_ok &= worst < 1e-6;
        notes.push(format!("{name} worst rel {worst:.1e} over {coords}"));
    }

    // sampled REINFORCE direction vs the exact gradient
    let policy = TabularPolicy::uniform(3);
    let exact = exact_gradient(&ls2, &policy).unwrap();
    let cfg = PgConfig {
        learning_rate: 1.0,
        gamma: ls2.gamma(),
        baseline: Baseline::MeanReturn,
    };
    let mut aligned = 0;
    for trial in 0..100 {
        let mut rng = SeedTree::new(trial).stream("pg");
        let batch: Vec<Trajectory> = (0..256)
            .map(|_| {
                let c = asym_distill::cmdp::sample_context(&ls2, &mut rng);
                rollout(&ls2, &policy, ls2.initial(c), &mut rng).unwrap()
            })
            .collect();
        let next = pg_update(&ls2, &policy, &batch, &cfg).unwrap();
        let mut dot = 0.0;
        for (obs, g) in &exact {
            let zero = vec![0.0; 3];
            let before = policy.logits(obs).unwrap_or(&zero);
            let after = next.logits(obs).unwrap_or(&zero);
            dot += g.iter().zip(after.iter().zip(before)).map(|(gj, (a, b))| gj * (a - b)).sum::<f64>();
        }
        aligned += usize::from(dot > 0.0);
    }
    verdict(
        fd_ok && aligned >= 95,
        format!("{}; positive inner product in {aligned}/100 trials", notes.join(", ")),
    )
}

// 7
fn discriminator_soundness() -> Verdict {
    let env = line_search_3();
    let tp = plan_teacher(&env).unwrap();
    let mut accuracy_ok = true;
    let mut sets_equal = true;
    let mut sizes = Vec::new();
    for seed in 1..=5u64 {
        let seeds = SeedTree::new(seed);
        let bc = run_bc(&env, &tp, 300, DEFAULT_RIDGE, 10, seeds).unwrap();
        let support: BTreeSet<Observation> = bc.dataset.observation_support();
        let mut rng = seeds.stream("students");
        let batch: Vec<Trajectory> = (0..20)
            .map(|_| {
                let c = asym_distill::cmdp::sample_context(&env, &mut rng);
                rollout(&env, &bc.policy, env.initial(c), &mut rng).unwrap()
            })
            .collect();
        let off: Vec<Observation> = batch
            .iter()
            .flat_map(|t| t.observations().copied())
            .filter(|o| !support.contains(o))
            .collect();
        let disc = train_discriminator(
            &Discriminator::new(0.5, 1e-12),
            bc.dataset.records().iter().map(|r| &r.obs),
            off.iter(),
        );
        // threshold classification on the two disjoint supports
        let correct = support.iter().all(|o| !disc.is_critical(o)) && off.iter().all(|o| disc.is_critical(o));
        accuracy_ok &= correct;

        let queried: BTreeSet<_> = select_queries(&batch, &disc).into_iter().collect();
        let expected: BTreeSet<_> = batch
            .iter()
            .flat_map(|t| t.states().copied())
            .filter(|s| !support.contains(&s.observation()))
            .collect();
        sets_equal &= queried == expected;
        sizes.push(expected.len());
    }
    verdict(
        accuracy_ok && sets_equal && sizes.iter().any(|n| *n > 0),
        format!("accuracy 1.0: {accuracy_ok}; queried set equals off-support set: {sets_equal}; off-support states per seed {sizes:?}"),
    )
}

// 8
fn majority_disagreements(ds: &AggDataset) -> (u64, u64) {
    let mut counts: std::collections::HashMap<Observation, Vec<u64>> = Default::default();
    for r in ds.records() {
        counts.entry(r.obs).or_insert_with(|| vec![0; ds.num_actions()])[r.action] += 1;
    }
    let wrong = counts.values().map(|c| c.iter().sum::<u64>() - c.iter().max().unwrap()).sum();
    (wrong, ds.len() as u64)
}

fn critical_selector() -> Verdict {
    let envs = [
        make_env(&EnvConfig::line_search(3)).unwrap(),
        make_env(&EnvConfig::push_line(3)).unwrap(),
        make_env(&EnvConfig::room_graph(4)).unwrap(),
    ];
    let mut rng = RngStream::from_id(2024);
    let mut set_ok = 0;
    let mut order_ok = 0;
    let mut candidates = 0;
    for instance in 0..20 {
        let env = &envs[instance % envs.len()];
        let tp = plan_teacher(env).unwrap();
        let mut ds = AggDataset::new(env.num_actions());
        for c in env.contexts().filter(|_| rng.uniform() < 0.6) {
            for s in &teacher_rollout_from(env, &tp, env.initial(c)).unwrap().steps {
                ds.push(Record {
                    obs: s.observation,
                    action: s.action,
                    context: s.state.context,
                    iteration: 0,
                });
            }
        }
        let c = rng.index(env.num_contexts());
        let traj = rollout(env, &TabularPolicy::uniform(env.num_actions()), env.initial(c), &mut rng).unwrap();

        // brute force: every step whose successor observation is unseen
        let support = ds.observation_support();
        let mut brute = BTreeSet::new();
        for (t, s) in traj.steps.iter().enumerate() {
            let tr = env.step(&s.state, s.action).unwrap();
            if !tr.terminal && !support.contains(&tr.next.observation()) {
                brute.insert(t);
            }
        }
        let ranked = oracle_critical_states(&traj, &ds, env, &tp, 0.0).unwrap();
        let got: BTreeSet<usize> = ranked.iter().map(|c| c.time).collect();
        let scan: BTreeSet<usize> = necessary_condition_times(&traj, &ds, env).unwrap().into_iter().collect();
        set_ok += usize::from(got == brute && scan == brute);
        candidates += ranked.len();

        let (d0, n0) = majority_disagreements(&ds);
        let base = if n0 == 0 { 0.0 } else { d0 as f64 / n0 as f64 };
        let recomputed: Vec<(f64, usize)> = ranked
            .iter()
            .map(|cand| {
                let mut aug = ds.clone();
                for s in &teacher_rollout_from(env, &tp, cand.state).unwrap().steps {
                    aug.push(Record {
                        obs: s.observation,
                        action: s.action,
                        context: s.state.context,
                        iteration: 1,
                    });
                }
                let (d1, n1) = majority_disagreements(&aug);
                (d1 as f64 / n1 as f64 - base, cand.time)
            })
            .collect();
        let matches = ranked.iter().zip(&recomputed).all(|(c, r)| (c.delta_gain - r.0).abs() < 1e-12);
        let sorted = recomputed
            .windows(2)
            .all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1));
        order_ok += usize::from(matches && sorted);
    }
    verdict(
        set_ok == 20 && order_ok == 20,
        format!("candidate sets equal in {set_ok}/20, Δδ ordering verified in {order_ok}/20 ({candidates} candidates)"),
    )
}

// 9
fn density_ratio_trend(runs: &Runs) -> Verdict {
    let seeds = &runs.retry.manifest.seeds;
    let per_seed: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&s| logs(&runs.retry, s).iter().map(|l| l.density_ratio.unwrap()).collect())
        .collect();
    let n = per_seed[0].len();
    let median: Vec<f64> = (0..n)
        .map(|i| {
            let mut col: Vec<f64> = per_seed.iter().map(|v| v[i]).collect();
            col.sort_by(f64::total_cmp);
            col[col.len() / 2]
        })
        .collect();
    let rises: Vec<usize> = (1..n).filter(|&i| median[i] > median[i - 1]).collect();
    let largest = rises.iter().map(|&i| median[i] - median[i - 1]).fold(0.0, f64::max);
    verdict(
        rises.is_empty(),
        format!(
            "median C {:.2} -> {:.2} over {} iterations; {} increases (largest {largest:.3})",
            median[0],
            median[n - 1],
            n - 1,
            rises.len()
        ),
    )
}

// 10
fn snapshot(dir: &Path, out: &mut Vec<(String, Vec<u8>)>, root: &Path) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            snapshot(&p, out, root);
        } else if p.file_name().unwrap() != "timing.json" {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
}

fn reproducibility(first: &Path, second: &Path) -> Verdict {
    let mut differing = Vec::new();
    let mut files = 0;
    for method in [Method::Bc, Method::Dagger, Method::Critiq, Method::Retry, Method::PlainRl, Method::Oracle] {
        let name = method.to_string();
        let a_dir = first.join(&name);
        let b_dir = second.join(&name);
        for dir in [&a_dir, &b_dir] {
            if !dir.join("summary.csv").exists() {
                harness_run(method, EnvConfig::line_search(3), dir);
            }
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        snapshot(&a_dir, &mut a, &a_dir);
        snapshot(&b_dir, &mut b, &b_dir);
        a.sort();
        b.sort();
        files += a.iter().filter(|(p, _)| p.ends_with(".jsonl") || p.ends_with(".csv")).count();
        // config.toml records the output path, which differs by construction
        let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
            v.into_iter().filter(|(p, _)| p != "config.toml").collect()
        };
        if strip(a) != strip(b) {
            differing.push(name);
        }
    }
    verdict(
        differing.is_empty(),
        format!("{files} JSONL/CSV files compared across 6 methods x 5 seeds; differing: {differing:?}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");

    let mut results: Vec<(&str, Verdict)> = Vec::new();
    results.push(("oracle correctness", oracle_correctness()));
    let runs = train_all(&first);
    results.push(("delta monotone under dagger", delta_monotone(&runs)));
    results.push(("critiq queries fewer labels than dagger", critiq_vs_dagger(&runs)));
    results.push(("success trends", success_trends(&runs)));
    results.push(("exploration levels", exploration_levels(&runs)));
    results.push(("policy gradient check", gradient_check()));
    results.push(("discriminator soundness", discriminator_soundness()));
    results.push(("critical-state selector", critical_selector()));
    results.push(("density ratio trend", density_ratio_trend(&runs)));
    results.push(("reproducibility", reproducibility(&first, &second)));

    println!();
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<42} {}  {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("\n{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
