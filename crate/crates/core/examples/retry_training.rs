//! ReTRy against plain policy gradient: success, exploration level and the
//! reset-vs-oracle density ratio along training.

use asym_distill::rl::{run_plain_rl, run_retry, RetryConfig};
use asym_distill::teacher::plan_teacher;
use asym_distill::{make_env, EnvConfig, SeedTree};

fn main() -> asym_distill::Result<()> {
    let env_cfg = match std::env::args().nth(1).as_deref() {
        Some("push_line") => EnvConfig::push_line(3),
        Some("room_graph") => EnvConfig::room_graph(4),
        _ => EnvConfig::line_search(3),
    };
    let env = make_env(&env_cfg)?;
    let tp = plan_teacher(&env)?;
    let cfg = RetryConfig::default();

    let retry = run_retry(&env, &tp, &cfg, SeedTree::new(1))?;
    let plain = run_plain_rl(&env, &cfg, SeedTree::new(1))?;
    println!("{}: {} iterations of {} episodes", env_cfg.label(), cfg.iterations, cfg.episodes_per_iter);
    println!("{:>5} {:>14} {:>8} {:>14} {:>8}", "iter", "retry success", "ratio C", "plain success", "modal");
    for (r, p) in retry.logs.iter().zip(&plain.logs).step_by(10) {
        println!(
            "{:>5} {:>14.2} {:>8.2} {:>14.2} {:>8?}",
            r.iteration,
            r.validation_success,
            r.density_ratio.unwrap_or(f64::NAN),
            p.validation_success,
            p.exploration.modal()
        );
    }
    println!(
        "teacher pool {} states, student pool {} states",
        retry.pool.teacher_states.len(),
        retry.pool.student_states.len()
    );
    Ok(())
}
