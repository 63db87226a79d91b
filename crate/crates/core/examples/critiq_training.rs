//! CritiQ on LineSearch-3 next to DAgger: the teacher is asked only where the
//! discriminator says the student left teacher-like states.

use asym_distill::il::{run_critiq, run_dagger, CritiqConfig, DaggerConfig, TeacherData};
use asym_distill::teacher::plan_teacher;
use asym_distill::{make_env, EnvConfig, SeedTree};

fn main() -> asym_distill::Result<()> {
    let env = make_env(&EnvConfig::line_search(3))?;
    let tp = plan_teacher(&env)?;
    let seed = SeedTree::new(std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1));

    let dagger = run_dagger(&env, &tp, &DaggerConfig::default(), seed)?;
    let variants = [
        ("single corrections", CritiqConfig::default()),
        (
            "recovery trajectories",
            CritiqConfig {
                recovery_trajectories: true,
                ..Default::default()
            },
        ),
        (
            "fresh teacher rollouts",
            CritiqConfig {
                teacher_data: TeacherData::Rollouts,
                ..Default::default()
            },
        ),
    ];
    println!("{:>4} {:>8} {:>8}", "iter", "dagger", "delta");
    for l in &dagger.logs {
        println!("{:>4} {:>8} {:>8.4}", l.iteration, l.queries_made, l.delta_total.unwrap_or(0.0));
    }
    for (name, cfg) in variants {
        let run = run_critiq(&env, &tp, &cfg, seed)?;
        println!("\ncritiq, {name}: best iteration {}", run.best_iteration);
        println!("{:>4} {:>8} {:>8} {:>8}", "iter", "queries", "delta", "success");
        for l in &run.logs {
            println!(
                "{:>4} {:>8} {:>8.4} {:>8.2}",
                l.iteration,
                l.queries_made,
                l.delta_total.unwrap_or(0.0),
                l.validation_success
            );
        }
        if let Some(s) = run.queried.iter().flatten().next() {
            println!("first queried state: {s}");
        }
    }
    Ok(())
}
