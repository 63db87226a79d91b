//! Test-only reference solvers shared by integration tests.

use std::collections::HashMap;

use asym_distill::cmdp::{BaseState, PrivilegedState};
use asym_distill::ContextualMdp;

/// Finite-horizon expectimax over (surviving contexts, base state, steps left),
/// written without reference to the belief solver.
pub struct Expectimax<'a> {
    env: &'a ContextualMdp,
    memo: HashMap<(u32, BaseState, usize), f64>,
}

impl Expectimax<'_> {
    fn value(&mut self, alive: u32, base: BaseState, left: usize) -> f64 {
        if left == 0 || alive == 0 {
            return 0.0;
        }
        if let Some(v) = self.memo.get(&(alive, base, left)) {
            return *v;
        }
        let prior = self.env.context_prior();
        let mass: f64 = (0..self.env.num_contexts()).filter(|c| alive >> c & 1 == 1).map(|c| prior[c]).sum();
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.env.num_actions() {
            // group surviving contexts by the base state they move to
            let mut groups: Vec<(BaseState, u32, f64)> = Vec::new();
            let mut q = 0.0;
            for c in (0..self.env.num_contexts()).filter(|c| alive >> c & 1 == 1) {
                let w = prior[c] / mass;
                let t = self.env.step(&PrivilegedState { context: c, base }, a).unwrap();
                q += w * t.reward;
                if t.terminal {
                    continue;
                }
                match groups.iter_mut().find(|g| g.0 == t.next.base) {
                    Some(g) => {
                        g.1 |= 1 << c;
                        g.2 += w;
                    }
                    None => groups.push((t.next.base, 1 << c, w)),
                }
            }
            for (b, set, w) in groups {
                q += self.env.gamma() * w * self.value(set, b, left - 1);
            }
            best = best.max(q);
        }
        self.memo.insert((alive, base, left), best);
        best
    }

    pub fn root(env: &ContextualMdp) -> f64 {
        let mut e = Expectimax {
            env,
            memo: HashMap::new(),
        };
        let all = (1u32 << env.num_contexts()) - 1;
        e.value(all, env.initial(0).base, env.horizon())
    }
}
