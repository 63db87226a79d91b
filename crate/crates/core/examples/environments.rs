//! The three search tasks: state counts, aliased observations and the
//! teacher's action sequence in every context.

use asym_distill::env::{aliased_observations, StateSpace};
use asym_distill::teacher::{plan_teacher, teacher_rollout_from};
use asym_distill::{make_env, EnvConfig};

fn main() -> asym_distill::Result<()> {
    for cfg in [EnvConfig::line_search(3), EnvConfig::push_line(3), EnvConfig::room_graph(4)] {
        let env = make_env(&cfg)?;
        let space = StateSpace::new(&env)?;
        let aliased = aliased_observations(&env)?;
        println!(
            "{}: {} privileged states, {} aliased observations, horizon {}",
            cfg.label(),
            space.len(),
            aliased.len(),
            env.horizon()
        );

        let tp = plan_teacher(&env)?;
        for c in env.contexts() {
            let t = teacher_rollout_from(&env, &tp, env.initial(c))?;
            let names: Vec<String> = t.actions().iter().map(|a| env.action_name(*a)).collect();
            println!("  context {c}: {}", names.join(" "));
        }
    }
    Ok(())
}
