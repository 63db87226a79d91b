//! Contextual MDP abstraction, the privileged/observed split, and rollouts.
//!
//! A privileged state pairs the hidden context with a base state. The student
//! only ever sees the base state (its [`Observation`]); the teacher sees both.
//! Dynamics are deterministic: randomness enters through context sampling and
//! policy sampling only.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub type ContextId = usize;
pub type ActionId = usize;

/// Context-free part of the simulator state: a location and a bitmask of
/// goals already revealed as wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BaseState {
    pub node: u16,
    pub mask: u32,
}

/// Full simulator state seen by the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrivilegedState {
    pub context: ContextId,
    pub base: BaseState,
}

impl PrivilegedState {
    pub fn new(context: ContextId, node: u16, mask: u32) -> Self {
        PrivilegedState {
            context,
            base: BaseState { node, mask },
        }
    }

    pub fn observation(&self) -> Observation {
        Observation {
            node: self.base.node,
            mask: self.base.mask,
        }
    }
}

impl fmt::Display for PrivilegedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, c={})", self.observation(), self.context)
    }
}

/// What the student sees. Never carries the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation {
    pub node: u16,
    pub mask: u32,
}

impl Observation {
    pub fn new(node: u16, mask: u32) -> Self {
        Observation { node, mask }
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node={} mask={{", self.node)?;
        let mut first = true;
        for bit in 0..32 {
            if self.mask & (1 << bit) != 0 {
                if !first {
                    write!(f, ",")?;
                }
                write!(f, "{bit}")?;
                first = false;
            }
        }
        write!(f, "}}")
    }
}

/// Result of one deterministic transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: PrivilegedState,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    LineSearch,
    PushLine,
    RoomGraph,
    Bandit,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EnvKind::LineSearch => "line_search",
            EnvKind::PushLine => "push_line",
            EnvKind::RoomGraph => "room_graph",
            EnvKind::Bandit => "bandit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layout {
    /// Chests on a line; goal `g` sits at `chests[g]`. Actions: Left, Right, Open.
    LineSearch { length: u16, chests: Vec<u16> },
    /// A block pushed along a line; goal `g` is cell `goals[g]`. Actions: PushLeft, PushRight.
    PushLine {
        length: u16,
        goals: Vec<u16>,
        start: u16,
    },
    /// Star graph. Node 0 is the hall, node `g + 1` is room `g`.
    /// Action 0 moves to the hall, action `g + 1` moves into room `g`.
    RoomGraph { rooms: usize },
    /// One state, every arm terminates with its fixed reward.
    Bandit { rewards: Vec<f64> },
}

/// A finite contextual MDP with deterministic dynamics and sparse reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualMdp {
    pub(crate) layout: Layout,
    pub(crate) num_contexts: usize,
    pub(crate) horizon: usize,
    pub(crate) gamma: f64,
    pub(crate) context_prior: Vec<f64>,
}

impl ContextualMdp {
    /// A single-context multi-armed bandit. Handy as a gradient-check fixture.
    pub fn bandit(rewards: Vec<f64>, gamma: f64) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::Config("bandit needs at least one arm".into()));
        }
        Ok(ContextualMdp {
            layout: Layout::Bandit { rewards },
            num_contexts: 1,
            horizon: 1,
            gamma,
            context_prior: vec![1.0],
        })
    }

    pub fn kind(&self) -> EnvKind {
        match self.layout {
            Layout::LineSearch { .. } => EnvKind::LineSearch,
            Layout::PushLine { .. } => EnvKind::PushLine,
            Layout::RoomGraph { .. } => EnvKind::RoomGraph,
            Layout::Bandit { .. } => EnvKind::Bandit,
        }
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    /// Number of goals whose probe events are tracked in the mask.
    pub fn num_goals(&self) -> usize {
        match &self.layout {
            Layout::Bandit { .. } => 0,
            _ => self.num_contexts,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn context_prior(&self) -> &[f64] {
        &self.context_prior
    }

    pub fn contexts(&self) -> impl Iterator<Item = ContextId> {
        0..self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        match &self.layout {
            Layout::LineSearch { .. } => 3,
            Layout::PushLine { .. } => 2,
            Layout::RoomGraph { rooms } => rooms + 1,
            Layout::Bandit { rewards } => rewards.len(),
        }
    }

    pub fn action_name(&self, action: ActionId) -> String {
        match &self.layout {
            Layout::LineSearch { .. } => ["Left", "Right", "Open"]
                .get(action)
                .map_or_else(|| format!("?{action}"), |s| s.to_string()),
            Layout::PushLine { .. } => ["PushLeft", "PushRight"]
                .get(action)
                .map_or_else(|| format!("?{action}"), |s| s.to_string()),
            Layout::RoomGraph { .. } => {
                if action == 0 {
                    "Hall".into()
                } else {
                    format!("Room{}", action - 1)
                }
            }
            Layout::Bandit { .. } => format!("Arm{action}"),
        }
    }

    pub(crate) fn num_nodes(&self) -> usize {
        match &self.layout {
            Layout::LineSearch { length, .. } | Layout::PushLine { length, .. } => {
                *length as usize + 1
            }
            Layout::RoomGraph { rooms } => rooms + 1,
            Layout::Bandit { .. } => 1,
        }
    }

    /// Every base state in the declared state set (reachable or not).
    pub fn base_states(&self) -> Vec<BaseState> {
        let masks = 1u32 << self.num_goals();
        let mut out = Vec::with_capacity(self.num_nodes() * masks as usize);
        for node in 0..self.num_nodes() as u16 {
            for mask in 0..masks {
                out.push(BaseState { node, mask });
            }
        }
        out
    }

    pub fn initial(&self, context: ContextId) -> PrivilegedState {
        let node = match &self.layout {
            Layout::PushLine { start, .. } => *start,
            _ => 0,
        };
        PrivilegedState::new(context, node, 0)
    }

    /// Checks that `state` belongs to the declared state set.
    ///
    /// A mask bit on the episode's own goal is rejected: probing the right goal
    /// ends the episode, so such states cannot occur.
    pub fn validate(&self, state: &PrivilegedState) -> Result<()> {
        let ok = state.context < self.num_contexts
            && (state.base.node as usize) < self.num_nodes()
            && state.base.mask >> self.num_goals() == 0
            && (self.num_goals() == 0 || state.base.mask & (1 << state.context) == 0);
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("{state} is outside the state set")))
        }
    }

    /// The student's view of a privileged state.
    pub fn observe(&self, state: &PrivilegedState) -> Result<Observation> {
        self.validate(state)?;
        Ok(state.observation())
    }

    pub fn step(&self, state: &PrivilegedState, action: ActionId) -> Result<Transition> {
        self.validate(state)?;
        if action >= self.num_actions() {
            return Err(Error::contract(format!(
                "action {action} out of range for {} actions",
                self.num_actions()
            )));
        }
        let c = state.context;
        let BaseState { node, mask } = state.base;
        let stay = |node, mask| Transition {
            next: PrivilegedState::new(c, node, mask),
            reward: 0.0,
            terminal: false,
        };
        let success = |node, mask| Transition {
            next: PrivilegedState::new(c, node, mask),
            reward: 1.0,
            terminal: true,
        };
        let t = match &self.layout {
            Layout::LineSearch { length, chests } => match action {
                0 => stay(node.saturating_sub(1), mask),
                1 => stay((node + 1).min(*length), mask),
                _ => match chests.iter().position(|&p| p == node) {
                    Some(g) if g == c => success(node, mask),
                    Some(g) => stay(node, mask | (1 << g)),
                    None => stay(node, mask),
                },
            },
            Layout::PushLine { length, goals, .. } => {
                let next = if action == 0 {
                    node.saturating_sub(1)
                } else {
                    (node + 1).min(*length)
                };
                match goals.iter().position(|&p| p == next) {
                    Some(g) if g == c => success(next, mask),
                    Some(g) => stay(next, mask | (1 << g)),
                    None => stay(next, mask),
                }
            }
            Layout::RoomGraph { .. } => {
                if action == 0 {
                    stay(0, mask)
                } else if node != 0 {
                    // rooms only connect to the hall
                    stay(node, mask)
                } else {
                    let g = action - 1;
                    let room = action as u16;
                    if g == c {
                        success(room, mask)
                    } else {
                        stay(room, mask | (1 << g))
                    }
                }
            }
            Layout::Bandit { rewards } => Transition {
                next: *state,
                reward: rewards[action],
                terminal: true,
            },
        };
        Ok(t)
    }

    /// Environment-provided features for linear policies: node one-hot, mask
    /// bits, and a bias term.
    pub fn features(&self, obs: &Observation) -> Vec<f64> {
        let mut f = vec![0.0; self.feature_dim()];
        let n = self.num_nodes();
        if (obs.node as usize) < n {
            f[obs.node as usize] = 1.0;
        }
        for g in 0..self.num_goals() {
            if obs.mask & (1 << g) != 0 {
                f[n + g] = 1.0;
            }
        }
        f[n + self.num_goals()] = 1.0;
        f
    }

    pub fn feature_dim(&self) -> usize {
        self.num_nodes() + self.num_goals() + 1
    }
}

/// Draws a context from the environment's prior.
pub fn sample_context(env: &ContextualMdp, rng: &mut RngStream) -> ContextId {
    rng.categorical(&env.context_prior)
}

/// Anything that yields an action distribution for a privileged state.
///
/// Student policies look only at `env.observe(state)`; teacher policies may
/// use the full state.
pub trait Policy {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>>;

    /// Identifies the parameter snapshot that generated a rollout, if the
    /// policy is trainable.
    fn snapshot(&self) -> Option<u64> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        (**self).action_probs(env, state)
    }

    fn snapshot(&self) -> Option<u64> {
        (**self).snapshot()
    }
}

/// Acts greedily with respect to the wrapped policy: argmax, ties to the
/// lowest action index.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<P>(pub P);

impl<P: Policy> Policy for Greedy<P> {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        let probs = self.0.action_probs(env, state)?;
        let best = argmax(&probs);
        let mut out = vec![0.0; probs.len()];
        out[best] = 1.0;
        Ok(out)
    }

    fn snapshot(&self) -> Option<u64> {
        self.0.snapshot()
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A fixed action sequence, used for replay. Runs out into an error.
#[derive(Debug, Clone)]
pub(crate) struct Scripted {
    pub actions: Vec<ActionId>,
    pub cursor: std::cell::Cell<usize>,
}

impl Policy for Scripted {
    fn action_probs(&self, env: &ContextualMdp, _state: &PrivilegedState) -> Result<Vec<f64>> {
        let i = self.cursor.get();
        let a = *self
            .actions
            .get(i)
            .ok_or_else(|| Error::contract("scripted policy ran out of actions"))?;
        self.cursor.set(i + 1);
        let mut p = vec![0.0; env.num_actions()];
        p[a] = 1.0;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: PrivilegedState,
    pub observation: Observation,
    pub action: ActionId,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: ContextId,
    pub start: PrivilegedState,
    pub steps: Vec<Step>,
    /// Identifier of the random stream the rollout drew from.
    pub seed: u64,
    /// Parameter snapshot of the acting policy, when it has one.
    pub snapshot: Option<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    pub fn succeeded(&self) -> bool {
        self.steps.last().is_some_and(|s| s.terminal && s.reward > 0.0)
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = &PrivilegedState> + '_ {
        self.steps.iter().map(|s| &s.state)
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> + '_ {
        self.steps.iter().map(|s| &s.observation)
    }

    /// The state reached after the last step.
    pub fn end_state(&self, env: &ContextualMdp) -> Result<PrivilegedState> {
        match self.steps.last() {
            None => Ok(self.start),
            Some(s) => Ok(env.step(&s.state, s.action)?.next),
        }
    }

    /// Re-simulates the recorded actions from the recorded start.
    pub fn replay(&self, env: &ContextualMdp) -> Result<Trajectory> {
        let script = Scripted {
            actions: self.actions(),
            cursor: std::cell::Cell::new(0),
        };
        let mut rng = RngStream::from_id(self.seed);
        let mut t = rollout_steps(env, &script, self.start, &mut rng, self.steps.len())?;
        t.snapshot = self.snapshot;
        Ok(t)
    }
}

/// Rolls `policy` out from `start` until a terminal event or the horizon.
pub fn rollout(
    env: &ContextualMdp,
    policy: &dyn Policy,
    start: PrivilegedState,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    rollout_steps(env, policy, start, rng, env.horizon)
}

fn rollout_steps(
    env: &ContextualMdp,
    policy: &dyn Policy,
    start: PrivilegedState,
    rng: &mut RngStream,
    max_steps: usize,
) -> Result<Trajectory> {
    env.validate(&start)?;
    let mut steps = Vec::with_capacity(max_steps.min(64));
    let mut state = start;
    for _ in 0..max_steps {
        let probs = policy.action_probs(env, &state)?;
        check_distribution(&probs, env.num_actions())?;
        let action = rng.categorical(&probs);
        let t = env.step(&state, action)?;
        steps.push(Step {
            state,
            observation: env.observe(&state)?,
            action,
            reward: t.reward,
            terminal: t.terminal,
        });
        if t.terminal {
            break;
        }
        state = t.next;
    }
    Ok(Trajectory {
        context: start.context,
        start,
        steps,
        seed: rng.id(),
        snapshot: policy.snapshot(),
    })
}

pub(crate) fn check_distribution(probs: &[f64], num_actions: usize) -> Result<()> {
    if probs.len() != num_actions {
        return Err(Error::contract(format!(
            "policy returned {} probabilities for {num_actions} actions",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "policy returned an invalid distribution {probs:?}"
        )));
    }
    Ok(())
}

/// Σ_t γ^t r_t over a trajectory.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut w = 1.0;
    for r in traj.rewards() {
        g += w * r;
        w *= gamma;
    }
    g
}

/// Σ_t γ^t r_t over a raw reward sequence.
pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}
