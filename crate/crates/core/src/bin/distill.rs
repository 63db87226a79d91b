use std::path::PathBuf;
use std::process::ExitCode;

use asym_distill::cmdp::Greedy;
use asym_distill::harness::{
    compare_runs, exit_code, oracle_summary, parse_env_spec, parse_seeds, run_experiment, write_comparison,
    ExperimentConfig, Method, Overrides,
};
use asym_distill::metrics::evaluate_against;
use asym_distill::store::{load_policy, PolicyDocument};
use asym_distill::{make_env, EnvConfig, Error, Result, SeedTree};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "distill", about = "Teacher-student distillation experiments under hidden context")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML). Flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment as kind[:K], e.g. line_search:3.
    #[arg(long)]
    env: Option<String>,
    /// Seed list: 3, 1,2,5 or 1..5.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a method over seeds and write per-seed artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// bc, dagger, critiq, retry, plain_rl or oracle.
        #[arg(long)]
        method: Option<String>,
    },
    /// Aggregate finished runs on the same environment and seeds.
    Compare {
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Evaluate a saved policy file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Solve for the best context-blind policy and report its value.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, method: Option<&str>) -> Result<ExperimentConfig> {
    let ov = Overrides {
        method: method.map(str::parse).transpose()?,
        env: common.env.as_deref().map(parse_env_spec).transpose()?,
        seeds: common.seed.as_deref().map(parse_seeds).transpose()?,
        out: common.out.clone(),
        episodes: common.episodes,
    };
    let base = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(
            ov.method.unwrap_or(Method::Oracle),
            parse_env_spec("line_search:3")?,
        ),
    };
    ov.apply(base)
}

fn env_only(common: &Common) -> Result<EnvConfig> {
    Ok(resolve(common, None)?.env)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { common, method } => {
            if common.config.is_none() && method.is_none() {
                return Err(Error::Config("run needs --config or --method".into()));
            }
            let cfg = resolve(&common, method.as_deref())?;
            let report = run_experiment(&cfg)?;
            for r in &report.rows {
                println!(
                    "{} {} seed {}: success {:.3} regret {:.4}",
                    r.method,
                    r.env,
                    r.seed,
                    r.success_rate,
                    r.regret.unwrap_or(f64::NAN)
                );
            }
            println!("artifacts in {}", report.dir.display());
        }
        Cmd::Compare { runs, out } => {
            let c = compare_runs(&runs)?;
            write_comparison(&c, &out)?;
            for m in &c.methods {
                println!(
                    "{:>8} {}: success {:.3} ± {:.3} over {} seeds",
                    m.method, m.env, m.success_mean, m.success_stderr, m.seeds
                );
            }
        }
        Cmd::Eval { common, policy } => {
            let cfg = resolve(&common, None)?;
            let env = make_env(&cfg.env)?;
            let (_, oracle) = oracle_summary(&cfg.env)?;
            let seed = cfg.seeds[0];
            let mut rng = SeedTree::new(seed).stream("eval");
            let report = match load_policy(&policy)? {
                PolicyDocument::Tabular(p) => evaluate_against(&env, &Greedy(&p), cfg.eval_episodes, &mut rng, &oracle)?,
                PolicyDocument::Linear(p) => evaluate_against(&env, &Greedy(&p), cfg.eval_episodes, &mut rng, &oracle)?,
                PolicyDocument::Teacher(_) => {
                    return Err(Error::Config("teacher tables read the context; evaluate a student policy".into()))
                }
            };
            let text = serde_json::to_string_pretty(&report).expect("report serialises");
            match &common.out {
                Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::Io { path: p.clone(), source: e })?,
                None => println!("{text}"),
            }
        }
        Cmd::Oracle { common } => {
            let env = env_only(&common)?;
            let (summary, _) = oracle_summary(&env)?;
            let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
            match &common.out {
                Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::Io { path: p.clone(), source: e })?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}
