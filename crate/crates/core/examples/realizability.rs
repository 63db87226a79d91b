//! How much of the teacher's behaviour a context-blind student can copy:
//! label disagreement of a demo set, and where a failing student would need
//! teacher help.

use asym_distill::belief::{bayes_error, oracle_critical_states};
use asym_distill::cmdp::rollout;
use asym_distill::il::collect_demos;
use asym_distill::metrics::epsilon_decomposition;
use asym_distill::store::bc_fit;
use asym_distill::teacher::plan_teacher;
use asym_distill::{make_env, EnvConfig, RngStream};

fn main() -> asym_distill::Result<()> {
    let env = make_env(&EnvConfig::line_search(3))?;
    let tp = plan_teacher(&env)?;
    let (ds, _) = collect_demos(&env, &tp, 300, &mut RngStream::from_id(1))?;

    let report = bayes_error(&ds);
    println!(
        "{} labels, delta = {}/{} = {:.4}",
        ds.len(),
        report.disagreements,
        report.labels,
        report.delta_total
    );
    for d in &report.per_observation {
        if d.local_delta > 0.0 {
            println!("  {} counts {:?} local delta {:.3}", d.obs, d.counts, d.local_delta);
        }
    }

    let student = bc_fit(&ds, 1e-9)?;
    let eps = epsilon_decomposition(&ds, &student, true);
    println!("greedy BC: epsilon {:.4} = model {:.4} + delta {:.4}", eps.epsilon, eps.epsilon_model, eps.delta);

    // a student rollout and the states where the dataset runs out
    let mut rng = RngStream::from_id(3);
    let traj = rollout(&env, &student, env.initial(2), &mut rng)?;
    println!("student in context 2 took {} steps, success {}", traj.len(), traj.succeeded());
    let ranked = oracle_critical_states(&traj, &ds, &env, &tp, 0.01)?;
    println!("{} candidates, best five:", ranked.len());
    for c in ranked.iter().take(5) {
        println!(
            "  t={} {} gain {:+.5} distance {} score {:.5}",
            c.time, c.state, c.delta_gain, c.distance, c.score
        );
    }
    Ok(())
}
