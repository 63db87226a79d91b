//! Ground-truth machinery for the student side.
//!
//! * [`solve_belief_mdp`] computes the best policy a context-blind student can
//!   follow, by value iteration over belief states (base state plus the set of
//!   contexts still consistent with everything observed).
//! * [`bayes_error`] measures how much of a labelled dataset no observation-only
//!   policy can fit: per observation, the fraction of labels that disagree with
//!   the majority label.
//! * [`oracle_critical_states`] ranks the states of a student trajectory where
//!   a teacher intervention would pay off most, by brute force.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cmdp::{
    ActionId, BaseState, ContextualMdp, Observation, Policy, PrivilegedState, Trajectory,
};
use crate::env::DEFAULT_STATE_CAP;
use crate::error::{Error, Result};
use crate::store::{AggDataset, Record, TabularPolicy};
use crate::teacher::{greedy_index, teacher_rollout_from, TeacherPolicy, VI_TOLERANCE};

/// A base state together with the contexts that are still possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeliefState {
    pub base: BaseState,
    /// Bit `c` set when context `c` is still possible.
    pub contexts: u32,
}

impl BeliefState {
    /// Posterior over contexts: the prior restricted to the surviving set.
    pub fn distribution(&self, prior: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = prior
            .iter()
            .enumerate()
            .map(|(c, p)| if self.contexts & (1 << c) != 0 { *p } else { 0.0 })
            .collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 {
            w.iter_mut().for_each(|x| *x /= z);
        }
        w
    }

    pub fn observation(&self) -> Observation {
        Observation::new(self.base.node, self.base.mask)
    }

    fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..32).filter(move |c| self.contexts & (1 << c) != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefEntry {
    pub action: ActionId,
    pub value: f64,
    pub q: Vec<f64>,
}

impl BeliefEntry {
    /// A(b, a) = Q(b, a) − V(b).
    pub fn advantage(&self, action: ActionId) -> f64 {
        self.q[action] - self.value
    }
}

/// The optimal context-blind policy and its value tables.
#[derive(Debug, Clone)]
pub struct RealizablePolicy {
    pub num_actions: usize,
    pub table: BTreeMap<BeliefState, BeliefEntry>,
    /// Initial beliefs with their prior mass.
    pub initial: Vec<(BeliefState, f64)>,
    /// Optimal realizable return from the initial distribution.
    pub j_opt: f64,
    by_observation: Option<HashMap<Observation, ActionId>>,
}

impl RealizablePolicy {
    pub fn entry(&self, b: &BeliefState) -> Option<&BeliefEntry> {
        self.table.get(b)
    }

    /// The belief state behind an observation, when observations determine
    /// beliefs (true for every shipped environment).
    pub fn belief_of(&self, obs: &Observation) -> Option<BeliefState> {
        let mut it = self.table.keys().filter(|b| b.observation() == *obs);
        let first = *it.next()?;
        it.next().is_none().then_some(first)
    }

    /// Action to take at an observation.
    pub fn action(&self, obs: &Observation) -> Result<ActionId> {
        let map = self.by_observation.as_ref().ok_or_else(|| {
            Error::contract("observations do not determine beliefs in this environment")
        })?;
        map.get(obs)
            .copied()
            .ok_or_else(|| Error::contract(format!("observation {obs} is unreachable")))
    }

    /// The same greedy table as a deterministic observation-level policy.
    pub fn to_tabular(&self) -> Result<TabularPolicy> {
        let map = self.by_observation.as_ref().ok_or_else(|| {
            Error::contract("observations do not determine beliefs in this environment")
        })?;
        let mut out = TabularPolicy::uniform(self.num_actions);
        for (obs, &a) in map {
            let mut row = vec![f64::NEG_INFINITY; self.num_actions];
            row[a] = 0.0;
            out.set_logits(*obs, row);
        }
        Ok(out)
    }
}

impl Policy for RealizablePolicy {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        let a = self.action(&env.observe(state)?)?;
        let mut p = vec![0.0; self.num_actions];
        p[a] = 1.0;
        Ok(p)
    }
}

struct Outcome {
    reward: f64,
    /// (probability, next belief index)
    next: Vec<(f64, usize)>,
}

/// Value iteration over the belief closure, residual below 1e-10.
pub fn solve_belief_mdp(env: &ContextualMdp) -> Result<RealizablePolicy> {
    solve_belief_mdp_capped(env, DEFAULT_STATE_CAP)
}

pub fn solve_belief_mdp_capped(env: &ContextualMdp, cap: usize) -> Result<RealizablePolicy> {
    let prior = env.context_prior();
    let na = env.num_actions();

    let mut groups: BTreeMap<BaseState, u32> = BTreeMap::new();
    for c in env.contexts() {
        if prior[c] > 0.0 {
            *groups.entry(env.initial(c).base).or_default() |= 1 << c;
        }
    }
    let initial: Vec<(BeliefState, f64)> = groups
        .into_iter()
        .map(|(base, contexts)| {
            let b = BeliefState { base, contexts };
            let mass = b.members().map(|c| prior[c]).sum();
            (b, mass)
        })
        .collect();

    let mut beliefs: Vec<BeliefState> = Vec::new();
    let mut index: HashMap<BeliefState, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for (b, _) in &initial {
        index.insert(*b, beliefs.len());
        beliefs.push(*b);
        queue.push_back(*b);
    }
    let mut model: Vec<Vec<Outcome>> = Vec::new();
    while let Some(b) = queue.pop_front() {
        let w = b.distribution(prior);
        let mut per_action = Vec::with_capacity(na);
        for a in 0..na {
            let mut reward = 0.0;
            let mut split: BTreeMap<BaseState, (u32, f64)> = BTreeMap::new();
            for c in b.members() {
                let t = env.step(&PrivilegedState { context: c, base: b.base }, a)?;
                reward += w[c] * t.reward;
                if !t.terminal {
                    let e = split.entry(t.next.base).or_default();
                    e.0 |= 1 << c;
                    e.1 += w[c];
                }
            }
            let mut next = Vec::with_capacity(split.len());
            for (base, (contexts, p)) in split {
                let nb = BeliefState { base, contexts };
                let j = match index.get(&nb) {
                    Some(j) => *j,
                    None => {
                        if beliefs.len() >= cap {
                            return Err(Error::StateCap { cap });
                        }
                        let j = beliefs.len();
                        index.insert(nb, j);
                        beliefs.push(nb);
                        queue.push_back(nb);
                        j
                    }
                };
                next.push((p, j));
            }
            per_action.push(Outcome { reward, next });
        }
        model.push(per_action);
    }

    let gamma = env.gamma();
    let q_of = |v: &[f64], i: usize, a: usize| {
        let o = &model[i][a];
        o.reward + gamma * o.next.iter().map(|(p, j)| p * v[*j]).sum::<f64>()
    };
    let mut v = vec![0.0; beliefs.len()];
    loop {
        let mut residual: f64 = 0.0;
        let next: Vec<f64> = (0..beliefs.len())
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

    let mut table = BTreeMap::new();
    for (i, b) in beliefs.iter().enumerate() {
        let q: Vec<f64> = (0..na).map(|a| q_of(&v, i, a)).collect();
        let action = greedy_index(&q);
        table.insert(
            *b,
            BeliefEntry {
                action,
                value: q[action],
                q,
            },
        );
    }
    let j_opt = initial
        .iter()
        .map(|(b, m)| m * table[b].value)
        .sum::<f64>();

    let mut by_obs: HashMap<Observation, ActionId> = HashMap::new();
    let mut ambiguous = false;
    let mut seen: HashSet<Observation> = HashSet::new();
    for (b, e) in &table {
        if !seen.insert(b.observation()) {
            ambiguous = true;
        }
        by_obs.insert(b.observation(), e.action);
    }
    Ok(RealizablePolicy {
        num_actions: na,
        table,
        initial,
        j_opt,
        by_observation: (!ambiguous).then_some(by_obs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDelta {
    pub obs: Observation,
    pub counts: Vec<u64>,
    pub local_delta: f64,
}

/// Label-disagreement summary of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// Fraction of all labels that disagree with their observation's majority.
    pub delta_total: f64,
    /// Exact numerator of `delta_total`.
    pub disagreements: u64,
    /// Exact denominator of `delta_total`.
    pub labels: u64,
    pub per_observation: Vec<ObservationDelta>,
    /// Observations carrying at least two distinct labels.
    pub aliased_set: Vec<Observation>,
}

impl DeltaReport {
    /// Exact comparison `self.delta_total <= other.delta_total` by
    /// cross-multiplying the integer counts.
    pub fn le_exact(&self, other: &DeltaReport) -> bool {
        u128::from(self.disagreements) * u128::from(other.labels.max(1))
            <= u128::from(other.disagreements) * u128::from(self.labels.max(1))
    }

    pub fn local(&self, obs: &Observation) -> Option<&ObservationDelta> {
        self.per_observation
            .binary_search_by(|d| d.obs.cmp(obs))
            .ok()
            .map(|i| &self.per_observation[i])
    }
}

/// Empirical Bayes error of a labelled dataset under 0-1 loss.
pub fn bayes_error(ds: &AggDataset) -> DeltaReport {
    delta_from_counts(ds.label_counts().iter().map(|(o, c)| (*o, c.clone())))
}

fn delta_from_counts(rows: impl Iterator<Item = (Observation, Vec<u64>)>) -> DeltaReport {
    let mut per_observation = Vec::new();
    let mut aliased_set = Vec::new();
    let (mut disagreements, mut labels) = (0u64, 0u64);
    for (obs, counts) in rows {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            continue;
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        if counts.iter().filter(|k| **k > 0).count() >= 2 {
            aliased_set.push(obs);
        }
        disagreements += n - max;
        labels += n;
        per_observation.push(ObservationDelta {
            obs,
            local_delta: (n - max) as f64 / n as f64,
            counts,
        });
    }
    DeltaReport {
        delta_total: if labels == 0 {
            0.0
        } else {
            disagreements as f64 / labels as f64
        },
        disagreements,
        labels,
        per_observation,
        aliased_set,
    }
}

/// Minimum number of transitions (any actions, context fixed) from `state` to
/// a state whose observation appears in `ds`. Saturates at the horizon when no
/// such state is reachable.
pub fn dataset_distance(state: &PrivilegedState, ds: &AggDataset, env: &ContextualMdp) -> Result<usize> {
    env.validate(state)?;
    let cap = env.horizon();
    let mut seen = HashSet::from([*state]);
    let mut frontier = vec![*state];
    for depth in 0..cap {
        if frontier.iter().any(|s| ds.contains_observation(&s.observation())) {
            return Ok(depth);
        }
        let mut next = Vec::new();
        for s in &frontier {
            for a in 0..env.num_actions() {
                let t = env.step(s, a)?;
                if !t.terminal && seen.insert(t.next) {
                    next.push(t.next);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(cap)
}

/// A scored critical-state candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCandidate {
    pub time: usize,
    pub state: PrivilegedState,
    /// Change in `delta_total` if the teacher's recovery trajectory from this
    /// state were aggregated into the dataset.
    pub delta_gain: f64,
    pub distance: usize,
    pub score: f64,
}

/// States of `traj` whose taken action leads to an observation outside the
/// dataset's support.
pub fn necessary_condition_times(traj: &Trajectory, ds: &AggDataset, env: &ContextualMdp) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (t, step) in traj.steps.iter().enumerate() {
        let tr = env.step(&step.state, step.action)?;
        if !tr.terminal && !ds.contains_observation(&env.observe(&tr.next)?) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Ranks critical-state candidates by `Δδ + λ_d · D(s, ds)`, ascending, ties
/// to the earliest time index.
pub fn oracle_critical_states(
    traj: &Trajectory,
    ds: &AggDataset,
    env: &ContextualMdp,
    tp: &TeacherPolicy,
    lambda_d: f64,
) -> Result<Vec<CriticalCandidate>> {
    if !(lambda_d >= 0.0) {
        return Err(Error::contract("lambda_d must be non-negative"));
    }
    let base = bayes_error(ds);
    let mut out = Vec::new();
    for t in necessary_condition_times(traj, ds, env)? {
        let state = traj.steps[t].state;
        let recovery = teacher_rollout_from(env, tp, state)?;
        let mut augmented = ds.clone();
        augmented.extend(recovery.steps.iter().map(|s| Record {
            obs: s.observation,
            action: s.action,
            context: s.state.context,
            iteration: usize::MAX,
        }));
        let delta_gain = bayes_error(&augmented).delta_total - base.delta_total;
        let distance = dataset_distance(&state, ds, env)?;
        out.push(CriticalCandidate {
            time: t,
            state,
            delta_gain,
            distance,
            score: delta_gain + lambda_d * distance as f64,
        });
    }
    out.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.time.cmp(&b.time)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(node: u16, action: usize) -> Record {
        Record {
            obs: Observation::new(node, 0),
            action,
            context: 0,
            iteration: 0,
        }
    }

    #[test]
    fn local_delta_counts_minority_labels() {
        let mut ds = AggDataset::new(3);
        ds.extend([rec(2, 2), rec(2, 1), rec(2, 1)]);
        let r = bayes_error(&ds);
        assert!((r.delta_total - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.aliased_set, vec![Observation::new(2, 0)]);
    }

    #[test]
    fn weighted_total() {
        let mut ds = AggDataset::new(3);
        ds.extend([rec(0, 1), rec(0, 1), rec(0, 1), rec(0, 1)]);
        ds.extend([rec(1, 0), rec(1, 0), rec(1, 2), rec(1, 2)]);
        let r = bayes_error(&ds);
        assert_eq!(r.delta_total, 0.25);
        assert_eq!((r.disagreements, r.labels), (2, 8));
    }

    #[test]
    fn empty_and_pure() {
        let r = bayes_error(&AggDataset::new(2));
        assert_eq!(r.delta_total, 0.0);
        assert!(r.per_observation.is_empty());
        let mut ds = AggDataset::new(2);
        ds.extend([rec(0, 1), rec(3, 0), rec(3, 0)]);
        assert_eq!(bayes_error(&ds).delta_total, 0.0);
    }

    #[test]
    fn belief_distribution_renormalises() {
        let b = BeliefState {
            base: BaseState { node: 0, mask: 1 },
            contexts: 0b110,
        };
        assert_eq!(b.distribution(&[1.0 / 3.0; 3]), vec![0.0, 0.5, 0.5]);
    }
}
