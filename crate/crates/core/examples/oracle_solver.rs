//! Solve for the best policy that never sees the context and walk it through
//! each context of LineSearch-3.

use asym_distill::belief::solve_belief_mdp;
use asym_distill::cmdp::rollout;
use asym_distill::harness::deterministic_success;
use asym_distill::{make_env, EnvConfig, RngStream};

fn main() -> asym_distill::Result<()> {
    let env = make_env(&EnvConfig::line_search(3))?;
    let oracle = solve_belief_mdp(&env)?;
    let g = env.gamma();
    println!("J_opt = {:.6}", oracle.j_opt);
    println!("closed form (g^2 + g^5 + g^8) / 3 = {:.6}", (g.powi(2) + g.powi(5) + g.powi(8)) / 3.0);
    println!("success over all contexts = {}", deterministic_success(&env, &oracle)?);

    for c in env.contexts() {
        let t = rollout(&env, &oracle, env.initial(c), &mut RngStream::from_id(0))?;
        let trace: Vec<String> = t
            .steps
            .iter()
            .map(|s| format!("{}:{}", s.observation, env.action_name(s.action)))
            .collect();
        println!("context {c}: {}", trace.join(" "));
    }

    // the belief tables also give advantages, e.g. of walking past chest 1
    let start = oracle.initial[0].0;
    let entry = oracle.entry(&start).expect("initial belief solved");
    println!("V(start) = {:.4}, Q(start, ·) = {:?}", entry.value, entry.q);

    for cfg in [EnvConfig::push_line(3), EnvConfig::room_graph(4)] {
        let env = make_env(&cfg)?;
        println!("{}: J_opt = {:.6}", cfg.label(), solve_belief_mdp(&env)?.j_opt);
    }
    Ok(())
}
