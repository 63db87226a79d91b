use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cmdp::{ActionId, ContextualMdp, Observation, Policy, PrivilegedState};
use crate::error::{Error, Result};
use crate::store::AggDataset;

/// Numerically stable softmax of `logits / temperature`. Handles `-inf` logits
/// as long as at least one entry is finite.
pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn fingerprint_f64s<'a>(h: &mut u64, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            *h ^= u64::from(b);
            *h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// Softmax policy with one logit row per observation. Unseen observations get
/// the uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub num_actions: usize,
    pub temperature: f64,
    #[serde(with = "rows")]
    logits: BTreeMap<Observation, Vec<f64>>,
}

mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        obs: Observation,
        #[serde(with = "crate::store::io::float_vec")]
        logits: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<Observation, Vec<f64>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(k, v)| Row {
            obs: *k,
            logits: v.clone(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Observation, Vec<f64>>, D::Error> {
        let rows: Vec<Row> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(|r| (r.obs, r.logits)).collect())
    }
}

impl TabularPolicy {
    /// The uniform policy.
    pub fn uniform(num_actions: usize) -> Self {
        TabularPolicy {
            num_actions,
            temperature: 1.0,
            logits: BTreeMap::new(),
        }
    }

    pub fn logits(&self, obs: &Observation) -> Option<&[f64]> {
        self.logits.get(obs).map(Vec::as_slice)
    }

    pub fn set_logits(&mut self, obs: Observation, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.num_actions);
        self.logits.insert(obs, logits);
    }

    pub fn logits_mut(&mut self, obs: Observation) -> &mut Vec<f64> {
        let n = self.num_actions;
        self.logits.entry(obs).or_insert_with(|| vec![0.0; n])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Observation, &Vec<f64>)> {
        self.logits.iter()
    }

    pub fn probs(&self, obs: &Observation) -> Vec<f64> {
        match self.logits.get(obs) {
            Some(l) => softmax(l, self.temperature),
            None => vec![1.0 / self.num_actions as f64; self.num_actions],
        }
    }

    pub fn greedy_action(&self, obs: &Observation) -> ActionId {
        crate::cmdp::argmax(&self.probs(obs))
    }

    /// Mean negative log-likelihood of the dataset labels.
    pub fn cross_entropy(&self, ds: &AggDataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for (obs, counts) in ds.label_counts() {
            let p = self.probs(obs);
            for (a, n) in counts.iter().enumerate() {
                if *n > 0 {
                    total -= *n as f64 * p[a].ln();
                }
            }
        }
        total / ds.len() as f64
    }

    /// Hash of the parameters; identifies the snapshot that produced a rollout.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.num_actions as u64;
        fingerprint_f64s(&mut h, [&self.temperature]);
        for (o, l) in &self.logits {
            h ^= (u64::from(o.node) << 32) | u64::from(o.mask);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
            fingerprint_f64s(&mut h, l);
        }
        h
    }
}

/// Action distribution of a tabular policy at an observation.
pub fn policy_probs(p: &TabularPolicy, obs: &Observation) -> Vec<f64> {
    p.probs(obs)
}

impl Policy for TabularPolicy {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        Ok(self.probs(&env.observe(state)?))
    }

    fn snapshot(&self) -> Option<u64> {
        Some(self.fingerprint())
    }
}

/// Behaviour cloning in closed form: per-observation log of Laplace-smoothed
/// label frequencies. As `ridge → 0` this is the cross-entropy minimiser.
pub fn bc_fit(ds: &AggDataset, ridge: f64) -> Result<TabularPolicy> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(ridge >= 0.0) {
        return Err(Error::contract("ridge must be non-negative"));
    }
    let na = ds.num_actions();
    let mut policy = TabularPolicy::uniform(na);
    for (obs, counts) in ds.label_counts() {
        let n: u64 = counts.iter().sum();
        let denom = n as f64 + na as f64 * ridge;
        let row = counts
            .iter()
            .map(|&k| ((k as f64 + ridge) / denom).ln())
            .collect();
        policy.set_logits(*obs, row);
    }
    Ok(policy)
}

/// Parameterised policies that the policy-gradient learner can update.
pub trait Trainable: Policy {
    type Grad: Default;

    /// Adds `weight · ∇_θ log π(action | obs)` into `grad`.
    fn add_score(&self, env: &ContextualMdp, obs: &Observation, action: ActionId, weight: f64, grad: &mut Self::Grad);

    /// θ ← θ + step · grad.
    fn apply(&mut self, grad: &Self::Grad, step: f64);
}

impl Trainable for TabularPolicy {
    type Grad = BTreeMap<Observation, Vec<f64>>;

    fn add_score(
        &self,
        _env: &ContextualMdp,
        obs: &Observation,
        action: ActionId,
        weight: f64,
        grad: &mut Self::Grad,
    ) {
        let p = self.probs(obs);
        let g = grad.entry(*obs).or_insert_with(|| vec![0.0; self.num_actions]);
        for (j, pj) in p.iter().enumerate() {
            let indicator = if j == action { 1.0 } else { 0.0 };
            g[j] += weight * (indicator - pj) / self.temperature;
        }
    }

    fn apply(&mut self, grad: &Self::Grad, step: f64) {
        for (obs, g) in grad {
            let row = self.logits_mut(*obs);
            for (l, d) in row.iter_mut().zip(g) {
                *l += step * d;
            }
        }
    }
}

/// Linear-softmax policy over environment features: logits = W · φ(o).
/// The hook for configurations too large for a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxPolicy {
    pub num_actions: usize,
    pub feature_dim: usize,
    /// Row-major `num_actions × feature_dim`.
    pub weights: Vec<f64>,
}

impl LinearSoftmaxPolicy {
    pub fn zeros(env: &ContextualMdp) -> Self {
        LinearSoftmaxPolicy {
            num_actions: env.num_actions(),
            feature_dim: env.feature_dim(),
            weights: vec![0.0; env.num_actions() * env.feature_dim()],
        }
    }

    pub fn probs(&self, env: &ContextualMdp, obs: &Observation) -> Vec<f64> {
        let phi = env.features(obs);
        let logits: Vec<f64> = (0..self.num_actions)
            .map(|a| {
                self.weights[a * self.feature_dim..(a + 1) * self.feature_dim]
                    .iter()
                    .zip(&phi)
                    .map(|(w, f)| w * f)
                    .sum()
            })
            .collect();
        softmax(&logits, 1.0)
    }
}

impl Policy for LinearSoftmaxPolicy {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        Ok(self.probs(env, &env.observe(state)?))
    }

    fn snapshot(&self) -> Option<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        fingerprint_f64s(&mut h, &self.weights);
        Some(h)
    }
}

impl Trainable for LinearSoftmaxPolicy {
    type Grad = Vec<f64>;

    fn add_score(
        &self,
        env: &ContextualMdp,
        obs: &Observation,
        action: ActionId,
        weight: f64,
        grad: &mut Self::Grad,
    ) {
        if grad.is_empty() {
            grad.resize(self.weights.len(), 0.0);
        }
        let p = self.probs(env, obs);
        let phi = env.features(obs);
        for (a, pa) in p.iter().enumerate() {
            let coef = weight * (if a == action { 1.0 } else { 0.0 } - pa);
            for (k, f) in phi.iter().enumerate() {
                grad[a * self.feature_dim + k] += coef * f;
            }
        }
    }

    fn apply(&mut self, grad: &Self::Grad, step: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w += step * g;
        }
    }
}
