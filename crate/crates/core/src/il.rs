//! Imitation trainers: behaviour cloning, DAgger (label every visited state)
//! and CritiQ (label only where a discriminator says the student has left
//! teacher-like territory).

use serde::{Deserialize, Serialize};

use crate::belief::bayes_error;
use crate::cmdp::{rollout, sample_context, ContextualMdp, Greedy, Observation, PrivilegedState, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, IterationLog};
use crate::rng::{RngStream, SeedTree};
use crate::store::{bc_fit, train_discriminator, AggDataset, Discriminator, Record, TabularPolicy};
use crate::teacher::{teacher_action, teacher_rollout_from, TeacherPolicy};

pub const DEFAULT_RIDGE: f64 = 0.1;

/// Teacher rollouts from sampled-context initial states, labelled at every step.
pub fn collect_demos(
    env: &ContextualMdp,
    tp: &TeacherPolicy,
    num_demos: usize,
    rng: &mut RngStream,
) -> Result<(AggDataset, Vec<Trajectory>)> {
    let mut ds = AggDataset::new(env.num_actions());
    let mut demos = Vec::with_capacity(num_demos);
    for _ in 0..num_demos {
        let c = sample_context(env, rng);
        let t = teacher_rollout_from(env, tp, env.initial(c))?;
        ds.extend(labels(&t, 0));
        demos.push(t);
    }
    Ok((ds, demos))
}

fn labels(t: &Trajectory, iteration: usize) -> impl Iterator<Item = Record> + '_ {
    t.steps.iter().map(move |s| Record {
        obs: s.observation,
        action: s.action,
        context: s.state.context,
        iteration,
    })
}

fn validate(
    env: &ContextualMdp,
    policy: &TabularPolicy,
    episodes: usize,
    seeds: &SeedTree,
    iteration: usize,
    log: &mut IterationLog,
) -> Result<()> {
    let mut rng = seeds.indexed_stream("validation", iteration as u64);
    let r = evaluate(env, &Greedy(policy), episodes, &mut rng)?;
    log.validation_success = r.success_rate;
    log.exploration = r.exploration;
    Ok(())
}

fn fill_dataset_stats(log: &mut IterationLog, ds: &AggDataset, policy: &TabularPolicy) {
    let d = bayes_error(ds);
    log.dataset_size = ds.len();
    log.delta_total = Some(d.delta_total);
    log.delta_disagreements = Some(d.disagreements);
    log.train_loss = Some(policy.cross_entropy(ds));
}

fn track_best_loss(logs: &[IterationLog], log: &mut IterationLog) {
    log.best_train_loss = logs
        .iter()
        .filter_map(|l| l.train_loss)
        .chain(log.train_loss)
        .reduce(f64::min);
}

#[derive(Debug, Clone)]
pub struct BcRun {
    pub policy: TabularPolicy,
    pub log: IterationLog,
    pub dataset: AggDataset,
}

/// Behaviour cloning on `num_demos` teacher demonstrations.
pub fn run_bc(
    env: &ContextualMdp,
    tp: &TeacherPolicy,
    num_demos: usize,
    ridge: f64,
    validation_episodes: usize,
    seeds: SeedTree,
) -> Result<BcRun> {
    if num_demos == 0 {
        return Err(Error::Config("behaviour cloning needs at least one demo".into()));
    }
    let (dataset, _) = collect_demos(env, tp, num_demos, &mut seeds.stream("demos"))?;
    let policy = bc_fit(&dataset, ridge)?;
    let mut log = IterationLog::new(0);
    fill_dataset_stats(&mut log, &dataset, &policy);
    log.best_train_loss = log.train_loss;
    validate(env, &policy, validation_episodes, &seeds, 0, &mut log)?;
    Ok(BcRun {
        policy,
        log,
        dataset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaggerConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub num_demos: usize,
    pub ridge: f64,
    pub validation_episodes: usize,
    /// Probability of executing the teacher's action during data collection
    /// (classic β mixing). Zero means pure student rollouts.
    pub beta: f64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        DaggerConfig {
            iterations: 10,
            episodes_per_iter: 10,
            num_demos: 300,
            ridge: DEFAULT_RIDGE,
            validation_episodes: 100,
            beta: 0.0,
        }
    }
}

/// Mixture of student and teacher used for β-mixed data collection.
struct Mixed<'a> {
    student: &'a TabularPolicy,
    teacher: &'a TeacherPolicy,
    beta: f64,
}

impl crate::cmdp::Policy for Mixed<'_> {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        let mut p = self.student.action_probs(env, state)?;
        if self.beta > 0.0 {
            let a = teacher_action(self.teacher, state)?;
            p.iter_mut().for_each(|x| *x *= 1.0 - self.beta);
            p[a] += self.beta;
        }
        Ok(p)
    }

    fn snapshot(&self) -> Option<u64> {
        self.student.snapshot()
    }
}

/// One DAgger iteration: roll out the student, label every visited state with
/// the teacher's action, refit. Returns the new policy and the iteration log.
pub fn run_dagger_iteration(
    env: &ContextualMdp,
    tp: &TeacherPolicy,
    policy: &TabularPolicy,
    ds: &mut AggDataset,
    cfg: &DaggerConfig,
    iteration: usize,
    seeds: &SeedTree,
) -> Result<(TabularPolicy, IterationLog)> {
    let mut rng = seeds.indexed_stream("train", iteration as u64);
    let actor = Mixed {
        student: policy,
        teacher: tp,
        beta: cfg.beta,
    };
    let mut queries = 0;
    for _ in 0..cfg.episodes_per_iter {
        let c = sample_context(env, &mut rng);
        let t = rollout(env, &actor, env.initial(c), &mut rng)?;
        for s in &t.steps {
            ds.push(Record {
                obs: s.observation,
                action: teacher_action(tp, &s.state)?,
                context: s.state.context,
                iteration,
            });
            queries += 1;
        }
    }
    let next = bc_fit(ds, cfg.ridge)?;
    let mut log = IterationLog::new(iteration);
    log.queries_made = queries;
    fill_dataset_stats(&mut log, ds, &next);
    validate(env, &next, cfg.validation_episodes, seeds, iteration, &mut log)?;
    Ok((next, log))
}

#[derive(Debug, Clone)]
pub struct IlRun {
    /// Validation-best policy over π_1..π_{N+1}.
    pub policy: TabularPolicy,
    pub best_iteration: usize,
    pub final_policy: TabularPolicy,
    pub logs: Vec<IterationLog>,
    pub dataset: AggDataset,
    /// Privileged states at which the teacher was queried, per iteration
    /// (index 0 is the demo phase and stays empty).
    pub queried: Vec<Vec<PrivilegedState>>,
}

fn pick_best(logs: &[IterationLog]) -> usize {
    let mut best = 0;
    for (i, l) in logs.iter().enumerate() {
        if l.validation_success > logs[best].validation_success {
            best = i;
        }
    }
    best
}

/// DAgger initialised from behaviour cloning.
pub fn run_dagger(env: &ContextualMdp, tp: &TeacherPolicy, cfg: &DaggerConfig, seeds: SeedTree) -> Result<IlRun> {
    if cfg.episodes_per_iter == 0 || cfg.validation_episodes == 0 {
        return Err(Error::Config("dagger needs episodes_per_iter >= 1".into()));
    }
    let bc = run_bc(env, tp, cfg.num_demos, cfg.ridge, cfg.validation_episodes, seeds)?;
    let mut ds = bc.dataset;
    let mut policies = vec![bc.policy];
    let mut logs = vec![bc.log];
    let mut queried = vec![Vec::new()];
    for i in 1..=cfg.iterations {
        let before = ds.len();
        let (p, mut log) = run_dagger_iteration(env, tp, policies.last().expect("seeded"), &mut ds, cfg, i, &seeds)?;
        queried.push(
            ds.records()[before..]
                .iter()
                .map(|r| PrivilegedState {
                    context: r.context,
                    base: crate::cmdp::BaseState {
                        node: r.obs.node,
                        mask: r.obs.mask,
                    },
                })
                .collect(),
        );
        track_best_loss(&logs, &mut log);
        logs.push(log);
        policies.push(p);
    }
    let best = pick_best(&logs);
    Ok(IlRun {
        policy: policies[best].clone(),
        best_iteration: best,
        final_policy: policies.pop().expect("non-empty"),
        logs,
        dataset: ds,
        queried,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CritiqConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub num_demos: usize,
    /// Query threshold on teacher-likeness.
    pub kappa: f64,
    /// Weight of the discriminator term in the student objective.
    pub lambda_reg: f64,
    pub ridge: f64,
    pub smoothing: f64,
    pub validation_episodes: usize,
    /// Optional diagnostic threshold on the student's training error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_welltrained: Option<f64>,
    /// Aggregate the teacher's whole recovery trajectory from each critical
    /// state instead of the single correction.
    pub recovery_trajectories: bool,
    /// What the discriminator treats as teacher data.
    pub teacher_data: TeacherData,
}

/// Source of the teacher side of the discriminator's training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TeacherData {
    /// Fresh teacher rollouts from sampled initial states each iteration.
    Rollouts,
    /// Every observation the teacher has labelled so far (demos and queries).
    #[default]
    Dataset,
}

impl Default for CritiqConfig {
    fn default() -> Self {
        CritiqConfig {
            iterations: 10,
            episodes_per_iter: 10,
            num_demos: 300,
            kappa: 0.5,
            lambda_reg: 0.1,
            ridge: DEFAULT_RIDGE,
            smoothing: 1.0,
            validation_episodes: 100,
            alpha_welltrained: None,
            recovery_trajectories: false,
            teacher_data: TeacherData::Dataset,
        }
    }
}

impl CritiqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.episodes_per_iter == 0 || self.validation_episodes == 0 {
            return Err(Error::Config(
                "critiq needs iterations, episodes_per_iter and validation_episodes >= 1".into(),
            ));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) || !(self.lambda_reg >= 0.0) || !(self.smoothing >= 0.0) {
            return Err(Error::Config(
                "critiq needs kappa in (0, 1), lambda_reg >= 0, smoothing >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Teacher-likeness of the observation an action leads to, averaged over the
/// contexts labelled at `obs`. A terminal success counts as fully teacher-like.
fn successor_scores(
    env: &ContextualMdp,
    disc: &Discriminator,
    obs: &Observation,
    contexts: &[usize],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; env.num_actions()];
    for &c in contexts {
        let st = PrivilegedState {
            context: c,
            base: crate::cmdp::BaseState {
                node: obs.node,
                mask: obs.mask,
            },
        };
        for (a, o) in out.iter_mut().enumerate() {
            let t = env.step(&st, a)?;
            *o += if t.terminal { 1.0 } else { disc.score(&t.next.observation()) };
        }
    }
    let n = contexts.len().max(1) as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Student update: cross-entropy refit on the aggregate, then a λ-weighted
/// logit bonus toward actions whose successors look teacher-like.
pub fn critiq_student_update(
    env: &ContextualMdp,
    ds: &AggDataset,
    disc: &Discriminator,
    ridge: f64,
    lambda_reg: f64,
) -> Result<TabularPolicy> {
    let mut policy = bc_fit(ds, ridge)?;
    if lambda_reg == 0.0 {
        return Ok(policy);
    }
    let mut contexts: std::collections::BTreeMap<Observation, Vec<usize>> = Default::default();
    for r in ds.records() {
        let v = contexts.entry(r.obs).or_default();
        if !v.contains(&r.context) {
            v.push(r.context);
        }
    }
    for (obs, cs) in &contexts {
        if cs.iter().any(|c| *c >= env.num_contexts()) {
            continue;
        }
        let bonus = successor_scores(env, disc, obs, cs)?;
        let row = policy.logits_mut(*obs);
        for (l, b) in row.iter_mut().zip(bonus) {
            *l += lambda_reg * b;
        }
    }
    Ok(policy)
}

/// Discriminator-gated teacher querying.
pub fn run_critiq(env: &ContextualMdp, tp: &TeacherPolicy, cfg: &CritiqConfig, seeds: SeedTree) -> Result<IlRun> {
    cfg.validate()?;
    let (mut ds, _) = collect_demos(env, tp, cfg.num_demos, &mut seeds.stream("demos"))?;
    let mut policy = bc_fit(&ds, cfg.ridge)?;

    // initial discriminator: fresh teacher rollouts against π_1's rollouts
    let mut disc = Discriminator::new(cfg.kappa, cfg.smoothing);
    {
        let mut rng = seeds.stream("disc-init");
        let student = student_rollouts(env, &policy, cfg.episodes_per_iter, &mut rng)?;
        disc = refit_discriminator(env, tp, &disc, &ds, &student, cfg, &mut rng)?;
    }

    let mut log0 = IterationLog::new(0);
    fill_dataset_stats(&mut log0, &ds, &policy);
    log0.best_train_loss = log0.train_loss;
    validate(env, &policy, cfg.validation_episodes, &seeds, 0, &mut log0)?;
    let mut logs = vec![log0];
    let mut policies = vec![policy.clone()];
    let mut queried = vec![Vec::new()];

    for i in 1..=cfg.iterations {
        let mut rng = seeds.indexed_stream("train", i as u64);
        let batch = student_rollouts(env, &policy, cfg.episodes_per_iter, &mut rng)?;
        let asked = select_queries(&batch, &disc);
        for st in &asked {
            if cfg.recovery_trajectories {
                let rec = teacher_rollout_from(env, tp, *st)?;
                ds.extend(labels(&rec, i));
            } else {
                ds.push(Record {
                    obs: st.observation(),
                    action: teacher_action(tp, st)?,
                    context: st.context,
                    iteration: i,
                });
            }
        }
        let mean_g = batch
            .iter()
            .map(|t| disc.mean_score(t.observations()))
            .sum::<f64>()
            / batch.len() as f64;
        policy = critiq_student_update(env, &ds, &disc, cfg.ridge, cfg.lambda_reg)?;
        disc = refit_discriminator(env, tp, &disc, &ds, &batch, cfg, &mut rng)?;

        let mut log = IterationLog::new(i);
        log.queries_made = asked.len();
        fill_dataset_stats(&mut log, &ds, &policy);
        log.train_loss = log.train_loss.map(|ce| ce - cfg.lambda_reg * mean_g);
        track_best_loss(&logs, &mut log);
        validate(env, &policy, cfg.validation_episodes, &seeds, i, &mut log)?;
        logs.push(log);
        policies.push(policy.clone());
        queried.push(asked);
    }
    let best = pick_best(&logs);
    Ok(IlRun {
        policy: policies[best].clone(),
        best_iteration: best,
        final_policy: policy,
        logs,
        dataset: ds,
        queried,
    })
}

fn student_rollouts(
    env: &ContextualMdp,
    policy: &TabularPolicy,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<Vec<Trajectory>> {
    (0..episodes)
        .map(|_| {
            let c = sample_context(env, rng);
            rollout(env, policy, env.initial(c), rng)
        })
        .collect()
}

/// Visited states whose observation the discriminator flags, in visit order.
pub fn select_queries(batch: &[Trajectory], disc: &Discriminator) -> Vec<PrivilegedState> {
    batch
        .iter()
        .flat_map(|t| t.steps.iter())
        .filter(|s| disc.is_critical(&s.observation))
        .map(|s| s.state)
        .collect()
}

fn refit_discriminator(
    env: &ContextualMdp,
    tp: &TeacherPolicy,
    disc: &Discriminator,
    ds: &AggDataset,
    student: &[Trajectory],
    cfg: &CritiqConfig,
    rng: &mut RngStream,
) -> Result<Discriminator> {
    let mut teacher_obs = Vec::new();
    match cfg.teacher_data {
        TeacherData::Rollouts => {
            for _ in 0..cfg.episodes_per_iter {
                let c = sample_context(env, rng);
                let t = teacher_rollout_from(env, tp, env.initial(c))?;
                teacher_obs.extend(t.observations().copied());
            }
        }
        TeacherData::Dataset => teacher_obs.extend(ds.records().iter().map(|r| r.obs)),
    }
    let student_obs: Vec<Observation> = student.iter().flat_map(|t| t.observations().copied()).collect();
    Ok(train_discriminator(disc, &teacher_obs, &student_obs))
}
