//! Evaluation and diagnostics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::belief::{bayes_error, RealizablePolicy};
use crate::cmdp::{
    argmax, discounted_return, rollout, sample_context, ActionId, ContextualMdp, Observation,
    Policy, Trajectory,
};
use crate::error::{Error, Result};
use crate::rl::exact_return;
use crate::rng::RngStream;
use crate::store::{AggDataset, TabularPolicy};

/// How many goals an episode probed, bucketed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationLevel {
    None,
    Low,
    Medium,
    High,
}

impl ExplorationLevel {
    pub const ALL: [ExplorationLevel; 4] = [
        ExplorationLevel::None,
        ExplorationLevel::Low,
        ExplorationLevel::Medium,
        ExplorationLevel::High,
    ];

    fn from_index(i: usize) -> Self {
        Self::ALL[i.min(3)]
    }
}

/// Exploration level of one episode.
///
/// The level index is the number of wrong goals the episode ruled out, capped
/// at 3. An episode that found its goal has probed every goal it needed to and
/// is rated `High`.
pub fn exploration_level(env: &ContextualMdp, traj: &Trajectory) -> Result<ExplorationLevel> {
    if traj.succeeded() {
        return Ok(ExplorationLevel::High);
    }
    let end = traj.end_state(env)?;
    Ok(ExplorationLevel::from_index(end.base.mask.count_ones() as usize))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationHistogram {
    pub none: usize,
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

impl ExplorationHistogram {
    pub fn add(&mut self, level: ExplorationLevel) {
        match level {
            ExplorationLevel::None => self.none += 1,
            ExplorationLevel::Low => self.low += 1,
            ExplorationLevel::Medium => self.medium += 1,
            ExplorationLevel::High => self.high += 1,
        }
    }

    pub fn count(&self, level: ExplorationLevel) -> usize {
        match level {
            ExplorationLevel::None => self.none,
            ExplorationLevel::Low => self.low,
            ExplorationLevel::Medium => self.medium,
            ExplorationLevel::High => self.high,
        }
    }

    pub fn total(&self) -> usize {
        self.none + self.low + self.medium + self.high
    }

    /// Most frequent level; ties go to the lower level.
    pub fn modal(&self) -> ExplorationLevel {
        let counts: Vec<f64> = ExplorationLevel::ALL
            .iter()
            .map(|l| self.count(*l) as f64)
            .collect();
        ExplorationLevel::ALL[argmax(&counts)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    /// Sample mean of the discounted return.
    pub mean_return: f64,
    /// Expected discounted return computed by enumeration.
    pub exact_return: f64,
    pub exploration: ExplorationHistogram,
    /// `J_opt − exact_return`, when an oracle was supplied.
    pub regret: Option<f64>,
    pub episodes: usize,
    pub seed: u64,
}

/// Runs `n` fresh-context episodes from initial states.
pub fn evaluate(
    env: &ContextualMdp,
    policy: &dyn Policy,
    n: usize,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    if n == 0 {
        return Err(Error::contract("evaluate needs at least one episode"));
    }
    let seed = rng.id();
    let mut successes = 0usize;
    let mut total_return = 0.0;
    let mut exploration = ExplorationHistogram::default();
    for _ in 0..n {
        let c = sample_context(env, rng);
        let t = rollout(env, policy, env.initial(c), rng)?;
        successes += usize::from(t.succeeded());
        total_return += discounted_return(&t, env.gamma());
        exploration.add(exploration_level(env, &t)?);
    }
    Ok(EvalReport {
        success_rate: successes as f64 / n as f64,
        mean_return: total_return / n as f64,
        exact_return: exact_return(env, policy)?,
        exploration,
        regret: None,
        episodes: n,
        seed,
    })
}

/// [`evaluate`] plus regret against the realizable oracle.
pub fn evaluate_against(
    env: &ContextualMdp,
    policy: &dyn Policy,
    n: usize,
    rng: &mut RngStream,
    oracle: &RealizablePolicy,
) -> Result<EvalReport> {
    let mut r = evaluate(env, policy, n, rng)?;
    r.regret = Some(oracle.j_opt - r.exact_return);
    Ok(r)
}

/// One row of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub queries_made: usize,
    pub dataset_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_disagreements: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    /// Smallest training loss seen so far in the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_train_loss: Option<f64>,
    pub validation_success: f64,
    pub exploration: ExplorationHistogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_ratio: Option<f64>,
}

impl IterationLog {
    pub fn new(iteration: usize) -> Self {
        IterationLog {
            iteration,
            queries_made: 0,
            dataset_size: 0,
            delta_total: None,
            delta_disagreements: None,
            train_loss: None,
            best_train_loss: None,
            validation_success: 0.0,
            exploration: ExplorationHistogram::default(),
            density_ratio: None,
        }
    }
}

/// Per-iteration realizability error and whether it never decreased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCurve {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    /// Checked exactly on integer counts when the logs carry them.
    pub non_decreasing: bool,
}

pub fn delta_curve(logs: &[IterationLog]) -> DeltaCurve {
    let values: Vec<f64> = logs.iter().filter_map(|l| l.delta_total).collect();
    let increments = values.windows(2).map(|w| w[1] - w[0]).collect();
    let exact: Vec<(u64, u64)> = logs
        .iter()
        .filter_map(|l| Some((l.delta_disagreements?, l.dataset_size as u64)))
        .collect();
    let non_decreasing = if exact.len() == values.len() {
        exact.windows(2).all(|w| {
            let ((d0, n0), (d1, n1)) = (w[0], w[1]);
            u128::from(d0) * u128::from(n1.max(1)) <= u128::from(d1) * u128::from(n0.max(1))
        })
    } else {
        values.windows(2).all(|w| w[1] >= w[0])
    };
    DeltaCurve {
        values,
        increments,
        non_decreasing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonDecomposition {
    /// Expected 0-1 disagreement of the policy with the dataset labels.
    pub epsilon: f64,
    pub epsilon_model: f64,
    pub delta: f64,
    /// Amount by which `epsilon − delta` was clipped to reach zero.
    pub clipped: f64,
}

/// Splits the policy's 0-1 training error into model error and realizability
/// error. With `greedy` the policy acts by argmax.
pub fn epsilon_decomposition(ds: &AggDataset, policy: &TabularPolicy, greedy: bool) -> EpsilonDecomposition {
    let delta = bayes_error(ds).delta_total;
    let mut wrong = 0.0;
    for (obs, counts) in ds.label_counts() {
        let probs = policy.probs(obs);
        let n: u64 = counts.iter().sum();
        let agree: f64 = if greedy {
            counts[argmax(&probs)] as f64
        } else {
            counts.iter().zip(&probs).map(|(k, p)| *k as f64 * p).sum()
        };
        wrong += n as f64 - agree;
    }
    let epsilon = if ds.is_empty() { 0.0 } else { wrong / ds.len() as f64 };
    let raw = epsilon - delta;
    EpsilonDecomposition {
        epsilon,
        epsilon_model: raw.max(0.0),
        delta,
        clipped: (-raw).max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub obs: Observation,
    pub reset: f64,
    pub target: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    /// Smoothed sup ratio C.
    pub sup_ratio: f64,
    pub per_observation: Vec<RatioRow>,
    pub smoothing: f64,
    /// True when the reset distribution puts mass where the target has none.
    pub disjoint_support: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage_sup: Option<f64>,
}

fn normalise(d: &BTreeMap<Observation, f64>) -> BTreeMap<Observation, f64> {
    let z: f64 = d.values().sum();
    d.iter()
        .map(|(o, w)| (*o, if z > 0.0 { w / z } else { 0.0 }))
        .collect()
}

/// `C = max_o (p(o) + η) / (q(o) + η)` over the union support, with `p` the
/// reset distribution and `q` the target visitation, both normalised first.
pub fn density_ratio(
    reset: &BTreeMap<Observation, f64>,
    target: &BTreeMap<Observation, f64>,
    smoothing: f64,
) -> Result<RatioReport> {
    if !(smoothing > 0.0) {
        return Err(Error::contract("density ratio smoothing must be positive"));
    }
    let p = normalise(reset);
    let q = normalise(target);
    let support: BTreeSet<Observation> = p.keys().chain(q.keys()).copied().collect();
    let mut rows = Vec::with_capacity(support.len());
    let mut sup: f64 = 0.0;
    let mut disjoint = false;
    for o in support {
        let pr = p.get(&o).copied().unwrap_or(0.0);
        let tq = q.get(&o).copied().unwrap_or(0.0);
        if pr > 0.0 && tq == 0.0 {
            disjoint = true;
        }
        let ratio = (pr + smoothing) / (tq + smoothing);
        sup = sup.max(ratio);
        rows.push(RatioRow {
            obs: o,
            reset: pr,
            target: tq,
            ratio,
        });
    }
    Ok(RatioReport {
        sup_ratio: sup,
        per_observation: rows,
        smoothing,
        disjoint_support: disjoint,
        advantage_sup: None,
    })
}

/// Largest `−A^{π_opt}(b, a)` over visited (observation, action) pairs.
pub fn advantage_sup<'a>(
    oracle: &RealizablePolicy,
    visited: impl IntoIterator<Item = (&'a Observation, ActionId)>,
) -> Option<f64> {
    visited
        .into_iter()
        .filter_map(|(o, a)| {
            let b = oracle.belief_of(o)?;
            Some(-oracle.entry(&b)?.advantage(a))
        })
        .reduce(f64::max)
}

/// Empirical observation visitation of a policy from initial states.
pub fn sampled_visitation(
    env: &ContextualMdp,
    policy: &dyn Policy,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<BTreeMap<Observation, f64>> {
    let mut counts: BTreeMap<Observation, f64> = BTreeMap::new();
    for _ in 0..episodes {
        let c = sample_context(env, rng);
        let t = rollout(env, policy, env.initial(c), rng)?;
        for o in t.observations() {
            *counts.entry(*o).or_default() += 1.0;
        }
    }
    Ok(normalise(&counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(n: u16) -> Observation {
        Observation::new(n, 0)
    }

    #[test]
    fn ratio_examples() {
        let same: BTreeMap<_, _> = [(o(0), 0.3), (o(1), 0.7)].into();
        assert!((density_ratio(&same, &same, 1e-9).unwrap().sup_ratio - 1.0).abs() < 1e-12);

        let reset: BTreeMap<_, _> = [(o(0), 1.0), (o(1), 1.0)].into();
        let target: BTreeMap<_, _> = (0..4).map(|i| (o(i), 1.0)).collect();
        let r = density_ratio(&reset, &target, 1e-12).unwrap();
        assert!((r.sup_ratio - 2.0).abs() < 1e-9);
        assert!(!r.disjoint_support);

        let outside: BTreeMap<_, _> = [(o(9), 1.0)].into();
        let r = density_ratio(&outside, &target, 0.01).unwrap();
        assert!(r.disjoint_support);
        assert!((r.sup_ratio - 1.01 / 0.01).abs() < 1e-9);
        assert!(density_ratio(&outside, &target, 0.0).is_err());
    }

    #[test]
    fn modal_ties_go_low() {
        let h = ExplorationHistogram {
            none: 2,
            low: 2,
            medium: 0,
            high: 1,
        };
        assert_eq!(h.modal(), ExplorationLevel::None);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn delta_curve_single_and_exact() {
        let mut a = IterationLog::new(0);
        a.delta_total = Some(0.1);
        a.delta_disagreements = Some(1);
        a.dataset_size = 10;
        let c = delta_curve(std::slice::from_ref(&a));
        assert!(c.non_decreasing);
        let mut b = IterationLog::new(1);
        b.delta_total = Some(0.1);
        b.delta_disagreements = Some(2);
        b.dataset_size = 20;
        assert!(delta_curve(&[a.clone(), b.clone()]).non_decreasing);
        b.dataset_size = 21;
        b.delta_total = Some(2.0 / 21.0);
        let c = delta_curve(&[a, b]);
        assert!(!c.non_decreasing);
        assert_eq!(c.increments.len(), 1);
    }
}
