//! Behaviour cloning against DAgger on LineSearch-3: success, labels asked
//! for and the label-disagreement curve.

use asym_distill::cmdp::Greedy;
use asym_distill::harness::deterministic_success;
use asym_distill::il::{run_bc, run_dagger, DaggerConfig, DEFAULT_RIDGE};
use asym_distill::metrics::delta_curve;
use asym_distill::teacher::plan_teacher;
use asym_distill::{make_env, EnvConfig, SeedTree};

fn main() -> asym_distill::Result<()> {
    let env = make_env(&EnvConfig::line_search(3))?;
    let tp = plan_teacher(&env)?;
    let cfg = DaggerConfig::default();
    for seed in 1..=3 {
        let bc = run_bc(&env, &tp, cfg.num_demos, DEFAULT_RIDGE, 100, SeedTree::new(seed))?;
        let dagger = run_dagger(&env, &tp, &cfg, SeedTree::new(seed))?;
        println!(
            "seed {seed}: bc success {:.2}, dagger best {:.2} (iteration {}) final {:.2}",
            deterministic_success(&env, &Greedy(&bc.policy))?,
            deterministic_success(&env, &Greedy(&dagger.policy))?,
            dagger.best_iteration,
            deterministic_success(&env, &Greedy(&dagger.final_policy))?,
        );
        let queries: Vec<usize> = dagger.logs.iter().map(|l| l.queries_made).collect();
        let curve = delta_curve(&dagger.logs);
        let deltas: Vec<String> = curve.values.iter().map(|d| format!("{d:.3}")).collect();
        println!("  queries {queries:?}");
        println!("  delta {} (non-decreasing: {})", deltas.join(" "), curve.non_decreasing);
    }
    Ok(())
}
