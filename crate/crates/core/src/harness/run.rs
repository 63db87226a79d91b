use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{solve_belief_mdp, RealizablePolicy};
use crate::cmdp::{rollout, ContextualMdp, Greedy, Policy};
use crate::env::{make_env, EnvConfig};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method, SCHEMA_VERSION};
use crate::il::{run_bc, run_critiq, run_dagger};
use crate::metrics::{evaluate_against, EvalReport, ExplorationLevel, IterationLog};
use crate::rl::{run_plain_rl, run_retry};
use crate::rng::{RngStream, SeedTree};
use crate::store::{save_policy, PolicyDocument, TabularPolicy};
use crate::teacher::plan_teacher;

pub const ITERATION_SCHEMA: &str = "asym-distill/iteration";
pub const FAILED_MARKER: &str = "FAILED";

/// One JSONL row of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub schema: String,
    pub schema_version: u32,
    pub method: Method,
    pub env: String,
    pub seed: u64,
    #[serde(flatten)]
    pub log: IterationLog,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub env: String,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub exact_return: f64,
    pub regret: Option<f64>,
    pub modal_exploration: ExplorationLevel,
    pub best_iteration: usize,
    pub iterations: usize,
    pub total_queries: usize,
    pub final_delta: Option<f64>,
}

/// Identity of a run directory, checked by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub method: Method,
    pub env_label: String,
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub env: String,
    pub j_opt: f64,
    /// Success probability of the oracle policy, enumerated over contexts.
    pub exact_success: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub oracle: OracleSummary,
}

struct Trained {
    policy: TabularPolicy,
    logs: Vec<IterationLog>,
    best_iteration: usize,
}

fn train(cfg: &ExperimentConfig, env: &ContextualMdp, oracle: &RealizablePolicy, seeds: SeedTree) -> Result<Trained> {
    let needs_teacher = !matches!(cfg.method, Method::PlainRl | Method::Oracle);
    let tp = if needs_teacher { Some(plan_teacher(env)?) } else { None };
    let tp = || tp.as_ref().expect("planned above");
    let validation = cfg.eval_episodes;
    Ok(match cfg.method {
        Method::Bc => {
            let r = run_bc(env, tp(), cfg.bc.num_demos, cfg.bc.ridge, validation, seeds)?;
            Trained {
                policy: r.policy,
                logs: vec![r.log],
                best_iteration: 0,
            }
        }
        Method::Dagger => {
            let r = run_dagger(env, tp(), &cfg.dagger, seeds)?;
            Trained {
                policy: r.policy,
                logs: r.logs,
                best_iteration: r.best_iteration,
            }
        }
        Method::Critiq => {
            let r = run_critiq(env, tp(), &cfg.critiq, seeds)?;
            Trained {
                policy: r.policy,
                logs: r.logs,
                best_iteration: r.best_iteration,
            }
        }
        Method::Retry => {
            let r = run_retry(env, tp(), &cfg.retry, seeds)?;
            Trained {
                policy: r.policy,
                logs: r.logs,
                best_iteration: r.best_iteration,
            }
        }
        Method::PlainRl => {
            let r = run_plain_rl(env, &cfg.retry, seeds)?;
            Trained {
                policy: r.policy,
                logs: r.logs,
                best_iteration: r.best_iteration,
            }
        }
        Method::Oracle => Trained {
            policy: oracle.to_tabular()?,
            logs: Vec::new(),
            best_iteration: 0,
        },
    })
}

/// Success probability of a deterministic policy, enumerated over contexts.
pub fn deterministic_success(env: &ContextualMdp, policy: &dyn Policy) -> Result<f64> {
    let mut total = 0.0;
    for c in env.contexts() {
        let mut rng = RngStream::from_id(0);
        let t = rollout(env, &Greedy(policy), env.initial(c), &mut rng)?;
        if t.succeeded() {
            total += env.context_prior()[c];
        }
    }
    Ok(total)
}

pub fn oracle_summary(env_cfg: &EnvConfig) -> Result<(OracleSummary, RealizablePolicy)> {
    let env = make_env(env_cfg)?;
    let oracle = solve_belief_mdp(&env)?;
    let summary = OracleSummary {
        env: env_cfg.label(),
        j_opt: oracle.j_opt,
        exact_success: deterministic_success(&env, &oracle)?,
    };
    Ok((summary, oracle))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn run_seed(cfg: &ExperimentConfig, env: &ContextualMdp, oracle: &RealizablePolicy, seed: u64) -> Result<SummaryRow> {
    let dir = seed_dir(&cfg.out, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let seeds = SeedTree::new(seed);
    let trained = train(cfg, env, oracle, seeds.child("train", 0))?;

    let label = cfg.env.label();
    let path = dir.join("iterations.jsonl");
    let mut jsonl = Vec::new();
    for log in &trained.logs {
        let rec = IterationRecord {
            schema: ITERATION_SCHEMA.into(),
            schema_version: SCHEMA_VERSION,
            method: cfg.method,
            env: label.clone(),
            seed,
            log: log.clone(),
        };
        serde_json::to_writer(&mut jsonl, &rec).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        jsonl.push(b'\n');
    }
    fs::write(&path, jsonl).map_err(|e| Error::io(&path, e))?;
    save_policy(dir.join("policy.json"), &PolicyDocument::Tabular(trained.policy.clone()))?;

    let mut rng = seeds.stream("eval");
    let report: EvalReport = evaluate_against(env, &Greedy(&trained.policy), cfg.eval_episodes, &mut rng, oracle)?;
    write_json(&dir.join("eval.json"), &report)?;

    Ok(SummaryRow {
        method: cfg.method,
        env: label,
        seed,
        success_rate: report.success_rate,
        mean_return: report.mean_return,
        exact_return: report.exact_return,
        regret: report.regret,
        modal_exploration: report.exploration.modal(),
        best_iteration: trained.best_iteration,
        iterations: trained.logs.len().saturating_sub(1),
        total_queries: trained.logs.iter().map(|l| l.queries_made).sum(),
        final_delta: trained.logs.last().and_then(|l| l.delta_total),
    })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    }
}

/// Runs every seed of an experiment and writes its artifacts under `cfg.out`:
///
/// ```text
/// config.toml  run.json  summary.csv  oracle.json  timing.json
/// seed-<s>/iterations.jsonl  seed-<s>/policy.json  seed-<s>/eval.json
/// ```
///
/// Everything except `timing.json` is a pure function of the config. A seed
/// that fails leaves a `FAILED` marker next to whatever it already wrote.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(out, e))?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        method: cfg.method,
        env_label: cfg.env.label(),
        env: cfg.env.clone(),
        seeds: cfg.seeds.clone(),
        eval_episodes: cfg.eval_episodes,
    };
    write_json(&out.join("run.json"), &manifest)?;

    let env = make_env(&cfg.env)?;
    let (oracle_row, oracle) = oracle_summary(&cfg.env)?;
    write_json(&out.join("oracle.json"), &oracle_row)?;

    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<(u64, Result<SummaryRow>, f64)> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let r = run_seed(cfg, &env, &oracle, seed);
                (seed, r, start.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut timing = serde_json::Map::new();
    for (seed, r, secs) in results {
        timing.insert(format!("seed-{seed}"), secs.into());
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                let m = seed_dir(out, seed).join(FAILED_MARKER);
                let _ = fs::create_dir_all(seed_dir(out, seed));
                let _ = fs::write(&m, format!("{e}\n"));
                failures.push(format!("seed {seed}: {e}"));
            }
        }
    }
    rows.sort_by_key(|r| r.seed);
    write_summary(&out.join("summary.csv"), &rows)?;
    write_json(&out.join("timing.json"), &timing)?;
    if !failures.is_empty() {
        let mut f = fs::File::create(&marker).map_err(|e| Error::io(&marker, e))?;
        for line in &failures {
            writeln!(f, "{line}").map_err(|e| Error::io(&marker, e))?;
        }
        return Err(Error::Runtime(failures.join("; ")));
    }
    Ok(RunReport {
        dir: out.clone(),
        rows,
        oracle: oracle_row,
    })
}
