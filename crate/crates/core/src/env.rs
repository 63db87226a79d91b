//! The shipped task family: discrete analogs of drawer search, block pushing
//! and room navigation. Every one hides the goal in the context and lets the
//! student observe only its position plus which goals it has already ruled out.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cmdp::{
    rollout, ContextualMdp, EnvKind, Layout, Observation, Policy, PrivilegedState,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const MAX_GOALS: usize = 8;
pub const DEFAULT_STATE_CAP: usize = 1_000_000;
pub const DEFAULT_GAMMA: f64 = 0.99;

/// Environment description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub num_goals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Goal cells (line kinds). Defaults to `2, 4, ..., 2K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_positions: Option<Vec<u16>>,
    /// Last cell of the line. Defaults to `2K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<u16>,
    /// Starting block cell for `push_line`. Defaults to `2⌊K/2⌋ + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<u16>,
    /// Prior over contexts. Defaults to uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_prior: Option<Vec<f64>>,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl EnvConfig {
    pub fn new(kind: EnvKind, num_goals: usize) -> Self {
        EnvConfig {
            kind,
            num_goals,
            horizon: None,
            gamma: DEFAULT_GAMMA,
            goal_positions: None,
            length: None,
            start: None,
            context_prior: None,
        }
    }

    pub fn line_search(k: usize) -> Self {
        Self::new(EnvKind::LineSearch, k)
    }

    pub fn push_line(k: usize) -> Self {
        Self::new(EnvKind::PushLine, k)
    }

    pub fn room_graph(k: usize) -> Self {
        Self::new(EnvKind::RoomGraph, k)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Short label such as `line_search-3`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.kind, self.num_goals)
    }

    fn default_horizon(&self) -> usize {
        let k = self.num_goals;
        match self.kind {
            EnvKind::LineSearch => 8 * k,
            EnvKind::PushLine => 6 * k,
            EnvKind::RoomGraph => 4 * k,
            EnvKind::Bandit => 1,
        }
    }
}

/// Builds and validates an environment.
pub fn make_env(cfg: &EnvConfig) -> Result<ContextualMdp> {
    let k = cfg.num_goals;
    if !(1..=MAX_GOALS).contains(&k) {
        return Err(Error::Config(format!(
            "num_goals must be in 1..={MAX_GOALS}, got {k}"
        )));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must be in (0, 1], got {}", cfg.gamma)));
    }
    let default_goals: Vec<u16> = (1..=k as u16).map(|i| 2 * i).collect();
    let goals = cfg.goal_positions.clone().unwrap_or(default_goals);
    let layout = match cfg.kind {
        EnvKind::LineSearch | EnvKind::PushLine => {
            let length = cfg.length.unwrap_or(2 * k as u16);
            if goals.len() != k {
                return Err(Error::Config(format!(
                    "expected {k} goal positions, got {}",
                    goals.len()
                )));
            }
            let distinct: HashSet<_> = goals.iter().collect();
            if distinct.len() != k || goals.iter().any(|&g| g > length) {
                return Err(Error::Config(
                    "goal positions must be distinct and on the line".into(),
                ));
            }
            if cfg.kind == EnvKind::LineSearch {
                if cfg.start.is_some() {
                    return Err(Error::Config("line_search always starts at cell 0".into()));
                }
                Layout::LineSearch {
                    length,
                    chests: goals,
                }
            } else {
                let start = cfg.start.unwrap_or(2 * (k as u16 / 2) + 1);
                if start > length || goals.contains(&start) {
                    return Err(Error::Config(format!(
                        "push_line start {start} must be a non-goal cell on the line"
                    )));
                }
                Layout::PushLine {
                    length,
                    goals,
                    start,
                }
            }
        }
        EnvKind::RoomGraph => {
            if cfg.goal_positions.is_some() || cfg.length.is_some() || cfg.start.is_some() {
                return Err(Error::Config("room_graph takes no line layout parameters".into()));
            }
            Layout::RoomGraph { rooms: k }
        }
        EnvKind::Bandit => {
            return Err(Error::Config(
                "bandit is a test fixture; build it with ContextualMdp::bandit".into(),
            ))
        }
    };
    let prior = match &cfg.context_prior {
        Some(p) => {
            if p.len() != k || p.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Config("context_prior must have K non-negative entries".into()));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("context_prior sums to {s}, not 1")));
            }
            p.clone()
        }
        None => vec![1.0 / k as f64; k],
    };
    let mut env = ContextualMdp {
        layout,
        num_contexts: k,
        horizon: usize::MAX,
        gamma: cfg.gamma,
        context_prior: prior,
    };
    let needed = min_search_horizon(&env)?;
    let horizon = cfg.horizon.unwrap_or_else(|| cfg.default_horizon());
    if horizon < needed {
        return Err(Error::Config(format!(
            "horizon {horizon} is shorter than the {needed} steps exhaustive search needs"
        )));
    }
    env.horizon = horizon;
    Ok(env)
}

/// Longest episode the nearest-first search needs over all contexts.
fn min_search_horizon(env: &ContextualMdp) -> Result<usize> {
    let mut probe = env.clone();
    probe.horizon = 64 * (env.num_nodes() + env.num_goals());
    let mut worst = 0;
    let mut rng = RngStream::from_id(0);
    for c in env.contexts() {
        let t = rollout(&probe, &NearestFirstSearch, probe.initial(c), &mut rng)?;
        if !t.succeeded() {
            return Err(Error::Config(format!(
                "layout is unsolvable for context {c} by exhaustive search"
            )));
        }
        worst = worst.max(t.len());
    }
    Ok(worst)
}

/// Scripted student that probes goals nearest-first (ties to the lowest goal
/// index). Acts on observations only, so it is realizable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestFirstSearch;

impl NearestFirstSearch {
    pub fn action(env: &ContextualMdp, obs: &Observation) -> usize {
        let unprobed = |g: usize| obs.mask & (1 << g) == 0;
        match &env.layout {
            Layout::LineSearch { chests, .. } => {
                if chests
                    .iter()
                    .enumerate()
                    .any(|(g, &p)| p == obs.node && unprobed(g))
                {
                    return 2;
                }
                toward_nearest(obs.node, chests, unprobed).unwrap_or(0)
            }
            Layout::PushLine { goals, .. } => toward_nearest(obs.node, goals, unprobed).unwrap_or(0),
            Layout::RoomGraph { rooms } => {
                if obs.node != 0 {
                    0
                } else {
                    (0..*rooms).find(|&g| unprobed(g)).map_or(0, |g| g + 1)
                }
            }
            Layout::Bandit { .. } => 0,
        }
    }
}

fn toward_nearest(node: u16, goals: &[u16], unprobed: impl Fn(usize) -> bool) -> Option<usize> {
    let target = goals
        .iter()
        .enumerate()
        .filter(|(g, &p)| unprobed(*g) && p != node)
        .min_by_key(|(g, &p)| (p.abs_diff(node), *g))
        .map(|(_, &p)| p)?;
    Some(if target < node { 0 } else { 1 })
}

impl Policy for NearestFirstSearch {
    fn action_probs(&self, env: &ContextualMdp, state: &PrivilegedState) -> Result<Vec<f64>> {
        let obs = env.observe(state)?;
        let mut p = vec![0.0; env.num_actions()];
        p[Self::action(env, &obs)] = 1.0;
        Ok(p)
    }
}

/// Reachable privileged states: breadth-first closure from every initial state
/// under every action. States entered by a terminal transition are excluded.
pub fn enumerate_states(env: &ContextualMdp) -> Result<Vec<PrivilegedState>> {
    enumerate_states_capped(env, DEFAULT_STATE_CAP)
}

pub fn enumerate_states_capped(env: &ContextualMdp, cap: usize) -> Result<Vec<PrivilegedState>> {
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    for c in env.contexts() {
        let s = env.initial(c);
        if seen.insert(s) {
            order.push(s);
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        for a in 0..env.num_actions() {
            let t = env.step(&s, a)?;
            if !t.terminal && seen.insert(t.next) {
                if seen.len() > cap {
                    return Err(Error::StateCap { cap });
                }
                order.push(t.next);
                queue.push_back(t.next);
            }
        }
    }
    if order.len() > cap {
        return Err(Error::StateCap { cap });
    }
    Ok(order)
}

/// Dense index over the reachable privileged states.
#[derive(Debug, Clone)]
pub struct StateSpace {
    states: Vec<PrivilegedState>,
    index: HashMap<PrivilegedState, usize>,
}

impl StateSpace {
    pub fn new(env: &ContextualMdp) -> Result<Self> {
        Self::with_cap(env, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(env: &ContextualMdp, cap: usize) -> Result<Self> {
        let states = enumerate_states_capped(env, cap)?;
        let index = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(StateSpace { states, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[PrivilegedState] {
        &self.states
    }

    pub fn index_of(&self, s: &PrivilegedState) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Observations with at least two reachable privileged preimages.
pub fn aliased_observations(env: &ContextualMdp) -> Result<Vec<Observation>> {
    let mut pre: HashMap<Observation, usize> = HashMap::new();
    for s in enumerate_states(env)? {
        *pre.entry(env.observe(&s)?).or_default() += 1;
    }
    let mut out: Vec<_> = pre.into_iter().filter(|(_, n)| *n >= 2).map(|(o, _)| o).collect();
    out.sort();
    Ok(out)
}
