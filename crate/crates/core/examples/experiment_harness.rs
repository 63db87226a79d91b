//! Drive the experiment runner from code: two methods over the same seeds,
//! then the cross-run comparison tables. Same artifacts as `distill run` and
//! `distill compare`.

use asym_distill::harness::{compare_runs, run_experiment, write_comparison, ExperimentConfig, Method};
use asym_distill::EnvConfig;

fn main() -> asym_distill::Result<()> {
    let root = std::env::temp_dir().join("asym-distill-harness");
    let mut dirs = Vec::new();
    for method in [Method::Dagger, Method::Critiq] {
        let mut cfg = ExperimentConfig::new(method, EnvConfig::line_search(3));
        cfg.seeds = vec![1, 2, 3];
        cfg.out = root.join(method.to_string());
        let report = run_experiment(&cfg)?;
        for row in &report.rows {
            println!(
                "{method} seed {}: success {:.2} regret {:.4} queries {}",
                row.seed,
                row.success_rate,
                row.regret.unwrap_or(f64::NAN),
                row.total_queries
            );
        }
        dirs.push(cfg.out);
    }

    let cmp = compare_runs(&dirs)?;
    let out = root.join("comparison");
    write_comparison(&cmp, &out)?;
    for m in &cmp.methods {
        println!("{}: {:.3} ± {:.3}", m.method, m.success_mean, m.success_stderr);
    }
    println!("tables in {}", out.display());
    println!("config used:\n{}", ExperimentConfig::new(Method::Critiq, EnvConfig::line_search(3)).to_toml());
    Ok(())
}
