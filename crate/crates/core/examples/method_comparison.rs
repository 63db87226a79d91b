//! Every training route on LineSearch-3 over five seeds: greedy success of
//! the returned policy, teacher labels used and the final label disagreement.

use asym_distill::cmdp::Greedy;
use asym_distill::harness::deterministic_success;
use asym_distill::il::{run_bc, run_critiq, run_dagger, CritiqConfig, DaggerConfig, DEFAULT_RIDGE};
use asym_distill::metrics::IterationLog;
use asym_distill::rl::{run_plain_rl, run_retry, RetryConfig};
use asym_distill::teacher::plan_teacher;
use asym_distill::{make_env, EnvConfig, SeedTree};

fn queries(logs: &[IterationLog]) -> usize {
    logs.iter().map(|l| l.queries_made).sum()
}

fn main() -> asym_distill::Result<()> {
    let env = make_env(&EnvConfig::line_search(3))?;
    let tp = plan_teacher(&env)?;
    println!("{:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9}", "seed", "bc", "dagger", "critiq", "retry", "plain", "dagger q", "critiq q");
    for seed in 1..=5 {
        let tree = SeedTree::new(seed);
        let bc = run_bc(&env, &tp, 300, DEFAULT_RIDGE, 100, tree)?;
        let dagger = run_dagger(&env, &tp, &DaggerConfig::default(), tree)?;
        let critiq = run_critiq(&env, &tp, &CritiqConfig::default(), tree)?;
        let retry = run_retry(&env, &tp, &RetryConfig::default(), tree)?;
        let plain = run_plain_rl(&env, &RetryConfig::default(), tree)?;
        let success = |p| deterministic_success(&env, &Greedy(p));
        println!(
            "{seed:>4} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>9} {:>9}",
            success(&bc.policy)?,
            success(&dagger.policy)?,
            success(&critiq.policy)?,
            success(&retry.policy)?,
            success(&plain.policy)?,
            queries(&dagger.logs),
            queries(&critiq.logs),
        );
    }
    Ok(())
}
