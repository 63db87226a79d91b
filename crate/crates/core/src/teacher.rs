//! Privileged teacher: exact value iteration on the fully observed MDP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cmdp::{rollout, ActionId, ContextualMdp, Policy, PrivilegedState, Trajectory};
use crate::env::StateSpace;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const VI_TOLERANCE: f64 = 1e-10;
const TIE_EPS: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEntry {
    pub action: ActionId,
    pub value: f64,
    pub q: Vec<f64>,
}

/// Optimal per-context action, value and Q tables over reachable states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherPolicy {
    pub num_actions: usize,
    pub gamma: f64,
    #[serde(with = "entries")]
    pub table: BTreeMap<PrivilegedState, TeacherEntry>,
}

mod entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        state: PrivilegedState,
        #[serde(flatten)]
        entry: TeacherEntry,
    }

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<PrivilegedState, TeacherEntry>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(k, v)| Row {
            state: *k,
            entry: v.clone(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<PrivilegedState, TeacherEntry>, D::Error> {
        let rows: Vec<Row> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(|r| (r.state, r.entry)).collect())
    }
}

/// Greedy selection with lowest-index tie-breaking under a small tolerance so
/// that round-off never reorders equal-valued actions.
pub(crate) fn greedy_index(q: &[f64]) -> ActionId {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q.iter().position(|v| *v >= max - TIE_EPS).unwrap_or(0)
}

/// Plans the teacher by value iteration to a residual below 1e-10.
pub fn plan_teacher(env: &ContextualMdp) -> Result<TeacherPolicy> {
    let space = StateSpace::new(env)?;
    plan_on(env, &space)
}

pub fn plan_on(env: &ContextualMdp, space: &StateSpace) -> Result<TeacherPolicy> {
    let na = env.num_actions();
    // successor index (None when terminal) and reward per (state, action)
    let mut succ = Vec::with_capacity(space.len() * na);
    for s in space.states() {
        for a in 0..na {
            let t = env.step(s, a)?;
            let next = if t.terminal {
                None
            } else {
                Some(
                    space
                        .index_of(&t.next)
                        .ok_or(Error::UnknownState(t.next))?,
                )
            };
            succ.push((next, t.reward));
        }
    }
    let gamma = env.gamma();
    let q_of = |v: &[f64], i: usize, a: usize| {
        let (next, r) = succ[i * na + a];
        r + next.map_or(0.0, |j| gamma * v[j])
    };
    let mut v = vec![0.0; space.len()];
    for sweep in 0.. {
        if sweep >= MAX_SWEEPS {
            return Err(Error::contract("value iteration did not converge"));
        }
        let mut residual: f64 = 0.0;
        let next: Vec<f64> = (0..space.len())
            .map(|i| {
                let best = (0..na).map(|a| q_of(&v, i, a)).fold(f64::NEG_INFINITY, f64::max);
                residual = residual.max((best - v[i]).abs());
                best
            })
            .collect();
        v = next;
        if residual < VI_TOLERANCE {
            break;
        }
    }
    let table = space
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let q: Vec<f64> = (0..na).map(|a| q_of(&v, i, a)).collect();
            let action = greedy_index(&q);
            (
                *s,
                TeacherEntry {
                    action,
                    value: q[action],
                    q,
                },
            )
        })
        .collect();
    Ok(TeacherPolicy {
        num_actions: na,
        gamma,
        table,
    })
}

impl TeacherPolicy {
    pub fn entry(&self, state: &PrivilegedState) -> Result<&TeacherEntry> {
        self.table.get(state).ok_or(Error::UnknownState(*state))
    }

    pub fn value(&self, state: &PrivilegedState) -> Result<f64> {
        Ok(self.entry(state)?.value)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Largest |Q(s,a) − (r + γ V(s'))| over the stored tables.
    pub fn bellman_residual(&self, env: &ContextualMdp) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (s, e) in &self.table {
            for a in 0..self.num_actions {
                let t = env.step(s, a)?;
                let backup = t.reward
                    + if t.terminal {
                        0.0
                    } else {
                        self.gamma * self.value(&t.next)?
                    };
                worst = worst.max((backup - e.q[a]).abs());
            }
        }
        Ok(worst)
    }
}

/// The teacher's greedy action at a privileged state.
pub fn teacher_action(tp: &TeacherPolicy, state: &PrivilegedState) -> Result<ActionId> {
    Ok(tp.entry(state)?.action)
}

impl Policy for TeacherPolicy {
    fn action_probs(&self, _env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.num_actions];
        p[teacher_action(self, state)?] = 1.0;
        Ok(p)
    }
}

/// Deterministic teacher rollout from an arbitrary reachable state.
pub fn teacher_rollout_from(
    env: &ContextualMdp,
    tp: &TeacherPolicy,
    start: PrivilegedState,
) -> Result<Trajectory> {
    tp.entry(&start)?;
    let mut rng = RngStream::from_id(0);
    rollout(env, tp, start, &mut rng)
}
