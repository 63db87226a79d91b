//! Sparse-reward REINFORCE with pluggable reset distributions.
//!
//! [`run_retry`] grows a pool of teacher-visited reset states by rolling the
//! teacher out from states the student reached; [`run_plain_rl`] is the same
//! learner resetting only to the true initial states.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::{solve_belief_mdp, RealizablePolicy};
use crate::cmdp::{
    rollout, sample_context, ContextualMdp, Greedy, Observation, Policy, PrivilegedState,
    Trajectory,
};
use crate::env::StateSpace;
use crate::error::{Error, Result};
use crate::metrics::{density_ratio, evaluate, IterationLog};
use crate::rng::{RngStream, SeedTree};
use crate::store::{TabularPolicy, Trainable};
use crate::teacher::{teacher_rollout_from, TeacherPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    MeanReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub baseline: Baseline,
}

/// One REINFORCE step: `θ ← θ + α/|B| · Σ_τ Σ_t ∇log π(a_t|o_t) (G_t − b)`.
///
/// Every trajectory must carry the snapshot of `policy` it was generated by.
pub fn pg_update<P: Trainable + Clone>(
    env: &ContextualMdp,
    policy: &P,
    batch: &[Trajectory],
    cfg: &PgConfig,
) -> Result<P> {
    if batch.is_empty() {
        return Err(Error::contract("pg_update needs a non-empty batch"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::contract("learning rate must be positive"));
    }
    let snap = policy
        .snapshot()
        .ok_or_else(|| Error::contract("policy has no snapshot id"))?;
    if let Some(t) = batch.iter().find(|t| t.snapshot != Some(snap)) {
        return Err(Error::OffPolicy {
            expected: snap,
            found: t.snapshot,
        });
    }
    let returns: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| {
            let mut g = 0.0;
            let mut out: Vec<f64> = t
                .rewards()
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .map(|r| {
                    g = r + cfg.gamma * g;
                    g
                })
                .collect();
            out.reverse();
            out
        })
        .collect();
    let b = match cfg.baseline {
        Baseline::None => 0.0,
        Baseline::MeanReturn => {
            let n: usize = returns.iter().map(Vec::len).sum();
            if n == 0 {
                0.0
            } else {
                returns.iter().flatten().sum::<f64>() / n as f64
            }
        }
    };
    let mut grad = P::Grad::default();
    for (t, g) in batch.iter().zip(&returns) {
        for (step, gt) in t.steps.iter().zip(g) {
            let w = gt - b;
            if w != 0.0 {
                policy.add_score(env, &step.observation, step.action, w, &mut grad);
            }
        }
    }
    let mut next = policy.clone();
    next.apply(&grad, cfg.learning_rate / batch.len() as f64);
    Ok(next)
}

/// Per-step action distributions for every reachable state.
fn policy_table(env: &ContextualMdp, space: &StateSpace, policy: &dyn Policy) -> Result<Vec<Vec<f64>>> {
    space
        .states()
        .iter()
        .map(|s| policy.action_probs(env, s))
        .collect()
}

struct FiniteModel {
    space: StateSpace,
    succ: Vec<(Option<usize>, f64)>,
    na: usize,
}

impl FiniteModel {
    fn new(env: &ContextualMdp) -> Result<Self> {
        let space = StateSpace::new(env)?;
        let na = env.num_actions();
        let mut succ = Vec::with_capacity(space.len() * na);
        for s in space.states() {
            for a in 0..na {
                let t = env.step(s, a)?;
                let next = if t.terminal {
                    None
                } else {
                    Some(space.index_of(&t.next).ok_or(Error::UnknownState(t.next))?)
                };
                succ.push((next, t.reward));
            }
        }
        Ok(FiniteModel { space, succ, na })
    }

    /// `V_t` for t = 0..=T (V_T = 0) under the given per-state distributions.
    fn values(&self, env: &ContextualMdp, probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.space.len();
        let horizon = env.horizon();
        let mut v = vec![vec![0.0; n]; horizon + 1];
        for t in (0..horizon).rev() {
            for i in 0..n {
                let mut acc = 0.0;
                for a in 0..self.na {
                    let p = probs[i][a];
                    if p == 0.0 {
                        continue;
                    }
                    let (next, r) = self.succ[i * self.na + a];
                    acc += p * (r + next.map_or(0.0, |j| env.gamma() * v[t + 1][j]));
                }
                v[t][i] = acc;
            }
        }
        v
    }

    /// Probability of occupying each state at each step, from the prior.
    fn occupancy(&self, env: &ContextualMdp, probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.space.len();
        let horizon = env.horizon();
        let mut d = vec![vec![0.0; n]; horizon];
        for c in env.contexts() {
            let i = self.space.index_of(&env.initial(c)).expect("initial state enumerated");
            d[0][i] += env.context_prior()[c];
        }
        for t in 0..horizon.saturating_sub(1) {
            for i in 0..n {
                let m = d[t][i];
                if m == 0.0 {
                    continue;
                }
                for a in 0..self.na {
                    if let (Some(j), _) = self.succ[i * self.na + a] {
                        d[t + 1][j] += m * probs[i][a];
                    }
                }
            }
        }
        d
    }
}

/// Exact expected discounted return from the initial distribution, by dynamic
/// programming over (state, step) within the horizon.
pub fn exact_return(env: &ContextualMdp, policy: &dyn Policy) -> Result<f64> {
    let model = FiniteModel::new(env)?;
    let probs = policy_table(env, &model.space, policy)?;
    let v = model.values(env, &probs);
    Ok(env
        .contexts()
        .map(|c| {
            let i = model.space.index_of(&env.initial(c)).expect("initial state enumerated");
            env.context_prior()[c] * v[0][i]
        })
        .sum())
}

/// Exact expected number of visits per observation within the horizon,
/// normalised to a distribution.
pub fn exact_visitation(env: &ContextualMdp, policy: &dyn Policy) -> Result<BTreeMap<Observation, f64>> {
    let model = FiniteModel::new(env)?;
    let probs = policy_table(env, &model.space, policy)?;
    let d = model.occupancy(env, &probs);
    let mut out: BTreeMap<Observation, f64> = BTreeMap::new();
    let mut z = 0.0;
    for row in &d {
        for (i, m) in row.iter().enumerate() {
            if *m > 0.0 {
                *out.entry(model.space.states()[i].observation()).or_default() += m;
                z += m;
            }
        }
    }
    out.values_mut().for_each(|x| *x /= z);
    Ok(out)
}

/// Analytic gradient of [`exact_return`] with respect to every logit of a
/// tabular policy (rows for unseen observations included), from step-wise
/// occupancies and action values.
pub fn exact_gradient(env: &ContextualMdp, policy: &TabularPolicy) -> Result<BTreeMap<Observation, Vec<f64>>> {
    let model = FiniteModel::new(env)?;
    let probs = policy_table(env, &model.space, policy)?;
    let v = model.values(env, &probs);
    let d = model.occupancy(env, &probs);
    let gamma = env.gamma();
    let na = model.na;
    let mut grad: BTreeMap<Observation, Vec<f64>> = BTreeMap::new();
    for s in model.space.states().iter() {
        grad.entry(s.observation()).or_insert_with(|| vec![0.0; na]);
    }
    let mut discount = 1.0;
    for t in 0..env.horizon() {
        for (i, s) in model.space.states().iter().enumerate() {
            let m = d[t][i];
            if m == 0.0 {
                continue;
            }
            let q: Vec<f64> = (0..na)
                .map(|a| {
                    let (next, r) = model.succ[i * na + a];
                    r + next.map_or(0.0, |j| gamma * v[t + 1][j])
                })
                .collect();
            let p = &probs[i];
            let mean_q: f64 = p.iter().zip(&q).map(|(pa, qa)| pa * qa).sum();
            let g = grad.get_mut(&s.observation()).expect("row inserted");
            for j in 0..na {
                // ∂/∂θ_j Σ_a π_a q_a = π_j (q_j − Σ_a π_a q_a) / temperature
                g[j] += discount * m * p[j] * (q[j] - mean_q) / policy.temperature;
            }
        }
        discount *= gamma;
    }
    Ok(grad)
}

/// Reset pools: states visited by teacher rollouts and by student rollouts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResetPool {
    pub teacher_states: Vec<PrivilegedState>,
    pub student_states: Vec<PrivilegedState>,
    /// Probability of resetting to a teacher state rather than an initial state.
    pub mix: f64,
}

impl ResetPool {
    pub fn new(mix: f64) -> Self {
        ResetPool {
            mix,
            ..Default::default()
        }
    }

    pub fn sample_reset(&self, env: &ContextualMdp, rng: &mut RngStream) -> PrivilegedState {
        let u = rng.uniform();
        if u < self.mix && !self.teacher_states.is_empty() {
            self.teacher_states[rng.index(self.teacher_states.len())]
        } else {
            env.initial(sample_context(env, rng))
        }
    }

    /// Observation distribution that [`ResetPool::sample_reset`] draws from.
    pub fn reset_distribution(&self, env: &ContextualMdp) -> BTreeMap<Observation, f64> {
        let mut out: BTreeMap<Observation, f64> = BTreeMap::new();
        let teacher_mass = if self.teacher_states.is_empty() { 0.0 } else { self.mix };
        for s in &self.teacher_states {
            *out.entry(s.observation()).or_default() += teacher_mass / self.teacher_states.len() as f64;
        }
        for c in env.contexts() {
            *out.entry(env.initial(c).observation()).or_default() +=
                (1.0 - teacher_mass) * env.context_prior()[c];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub learning_rate: f64,
    /// Discount for returns; the environment's when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub baseline: Baseline,
    /// Teacher rollouts from student-visited states per iteration.
    pub teacher_rollouts_per_iter: usize,
    /// Teacher rollouts from initial states that seed the teacher pool.
    pub initial_teacher_rollouts: usize,
    pub mix: f64,
    pub validation_episodes: usize,
    /// Log the smoothed density ratio against the realizable oracle.
    pub track_density_ratio: bool,
    pub ratio_smoothing: f64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            iterations: 150,
            episodes_per_iter: 32,
            learning_rate: 1.0,
            gamma: None,
            baseline: Baseline::MeanReturn,
            teacher_rollouts_per_iter: 10,
            initial_teacher_rollouts: 50,
            mix: 0.5,
            validation_episodes: 100,
            track_density_ratio: true,
            ratio_smoothing: 1e-3,
        }
    }
}

impl RetryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_iter == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "retry needs episodes_per_iter >= 1 and learning_rate > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix) || self.validation_episodes == 0 {
            return Err(Error::Config(
                "retry needs mix in [0, 1] and validation_episodes >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RlRun {
    /// Validation-best policy over π_1..π_{N+1}.
    pub policy: TabularPolicy,
    pub best_iteration: usize,
    pub final_policy: TabularPolicy,
    pub logs: Vec<IterationLog>,
    pub pool: ResetPool,
}

/// Resetting to teacher recovery states.
pub fn run_retry(env: &ContextualMdp, tp: &TeacherPolicy, cfg: &RetryConfig, seeds: SeedTree) -> Result<RlRun> {
    run_rl(env, Some(tp), cfg, seeds)
}

/// The same learner, resetting only to the true initial states.
pub fn run_plain_rl(env: &ContextualMdp, cfg: &RetryConfig, seeds: SeedTree) -> Result<RlRun> {
    let cfg = RetryConfig {
        mix: 0.0,
        teacher_rollouts_per_iter: 0,
        initial_teacher_rollouts: 0,
        ..cfg.clone()
    };
    run_rl(env, None, &cfg, seeds)
}

fn run_rl(
    env: &ContextualMdp,
    tp: Option<&TeacherPolicy>,
    cfg: &RetryConfig,
    seeds: SeedTree,
) -> Result<RlRun> {
    cfg.validate()?;
    let pg = PgConfig {
        learning_rate: cfg.learning_rate,
        gamma: cfg.gamma.unwrap_or(env.gamma()),
        baseline: cfg.baseline,
    };
    let oracle_visits = if cfg.track_density_ratio {
        let oracle: RealizablePolicy = solve_belief_mdp(env)?;
        Some(exact_visitation(env, &oracle)?)
    } else {
        None
    };

    let mut pool = ResetPool::new(cfg.mix);
    if let Some(tp) = tp {
        let mut rng = seeds.stream("teacher-init");
        for _ in 0..cfg.initial_teacher_rollouts {
            let c = sample_context(env, &mut rng);
            let t = teacher_rollout_from(env, tp, env.initial(c))?;
            pool.teacher_states.extend(t.states().copied());
        }
    }

    let mut policy = TabularPolicy::uniform(env.num_actions());
    let validate = |p: &TabularPolicy, i: usize, log: &mut IterationLog| -> Result<()> {
        let mut rng = seeds.indexed_stream("validation", i as u64);
        let r = evaluate(env, &Greedy(p), cfg.validation_episodes, &mut rng)?;
        log.validation_success = r.success_rate;
        log.exploration = r.exploration;
        Ok(())
    };
    let ratio = |pool: &ResetPool| -> Result<Option<f64>> {
        oracle_visits
            .as_ref()
            .map(|q| Ok(density_ratio(&pool.reset_distribution(env), q, cfg.ratio_smoothing)?.sup_ratio))
            .transpose()
    };

    let mut logs = Vec::with_capacity(cfg.iterations + 1);
    let mut first = IterationLog::new(0);
    first.dataset_size = pool.teacher_states.len();
    first.density_ratio = ratio(&pool)?;
    validate(&policy, 0, &mut first)?;
    let (mut best, mut best_iter, mut best_score) = (policy.clone(), 0, first.validation_success);
    logs.push(first);

    for i in 1..=cfg.iterations {
        let mut rng = seeds.indexed_stream("train", i as u64);
        let mut batch = Vec::with_capacity(cfg.episodes_per_iter);
        for _ in 0..cfg.episodes_per_iter {
            let start = pool.sample_reset(env, &mut rng);
            batch.push(rollout(env, &policy, start, &mut rng)?);
        }
        let visited: Vec<PrivilegedState> = batch.iter().flat_map(|t| t.states().copied()).collect();
        pool.student_states.extend(visited.iter().copied());
        let mean_return =
            batch.iter().map(|t| crate::cmdp::discounted_return(t, pg.gamma)).sum::<f64>() / batch.len() as f64;
        policy = pg_update(env, &policy, &batch, &pg)?;

        let mut queries = 0;
        if let Some(tp) = tp {
            if !visited.is_empty() {
                // separate stream so the student's sampling does not depend on teacher traffic
                let mut trng = seeds.indexed_stream("teacher", i as u64);
                for _ in 0..cfg.teacher_rollouts_per_iter {
                    let s0 = visited[trng.index(visited.len())];
                    let t = teacher_rollout_from(env, tp, s0)?;
                    pool.teacher_states.extend(t.states().copied());
                    queries += 1;
                }
            }
        }

        let mut log = IterationLog::new(i);
        log.queries_made = queries;
        log.dataset_size = pool.teacher_states.len();
        log.train_loss = Some(-mean_return);
        log.best_train_loss = logs
            .iter()
            .filter_map(|l| l.train_loss)
            .chain([-mean_return])
            .reduce(f64::min);
        log.density_ratio = ratio(&pool)?;
        validate(&policy, i, &mut log)?;
        if log.validation_success > best_score {
            best = policy.clone();
            best_iter = i;
            best_score = log.validation_success;
        }
        logs.push(log);
    }
    Ok(RlRun {
        policy: best,
        best_iteration: best_iter,
        final_policy: policy,
        logs,
        pool,
    })
}
