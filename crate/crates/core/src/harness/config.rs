use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmdp::EnvKind;
use crate::env::{make_env, EnvConfig};
use crate::error::{Error, Result};
use crate::il::{CritiqConfig, DaggerConfig, DEFAULT_RIDGE};
use crate::rl::RetryConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bc,
    Dagger,
    Critiq,
    Retry,
    PlainRl,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bc,
        Method::Dagger,
        Method::Critiq,
        Method::Retry,
        Method::PlainRl,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::Dagger => "dagger",
            Method::Critiq => "critiq",
            Method::Retry => "retry",
            Method::PlainRl => "plain_rl",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; expected one of bc, dagger, critiq, retry, plain_rl, oracle"
                ))
            })
    }
}

/// Parses `kind` or `kind:K`, e.g. `line_search:3`.
pub fn parse_env_spec(s: &str) -> Result<EnvConfig> {
    let (kind, k) = match s.split_once(':') {
        Some((kind, k)) => (
            kind,
            Some(k.parse::<usize>().map_err(|_| {
                Error::Config(format!("bad goal count in environment {s:?}"))
            })?),
        ),
        None => (s, None),
    };
    let (kind, default_k) = match kind {
        "line_search" => (EnvKind::LineSearch, 3),
        "push_line" => (EnvKind::PushLine, 3),
        "room_graph" => (EnvKind::RoomGraph, 4),
        _ => {
            return Err(Error::Config(format!(
                "unknown environment {kind:?}; expected line_search, push_line or room_graph"
            )))
        }
    };
    Ok(EnvConfig::new(kind, k.unwrap_or(default_k)))
}

/// Parses `3`, `1,2,5` or `1..5` (inclusive).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub num_demos: usize,
    pub ridge: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            num_demos: 300,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// One experiment: a method on an environment over a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub method: Method,
    pub env: EnvConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Parallel seed slots; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub bc: BcConfig,
    #[serde(default)]
    pub dagger: DaggerConfig,
    #[serde(default)]
    pub critiq: CritiqConfig,
    #[serde(default)]
    pub retry: RetryConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_eval_episodes() -> usize {
    100
}

impl ExperimentConfig {
    pub fn new(method: Method, env: EnvConfig) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            method,
            env,
            seeds: default_seeds(),
            out: default_out(),
            eval_episodes: default_eval_episodes(),
            workers: None,
            bc: BcConfig::default(),
            dagger: DaggerConfig::default(),
            critiq: CritiqConfig::default(),
            retry: RetryConfig::default(),
        }
    }

    /// Parses TOML text. Errors carry `line:column` of the offending spot.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| line_col(text, s.start))
                .map(|(l, c)| format!("{origin}:{l}:{c}"))
                .unwrap_or_else(|| origin.to_string());
            Error::Config(format!("{at}: {}", e.message()))
        })?;
        cfg.validate().map_err(|e| anchor(e, text, origin))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialise")
    }

    /// Semantic checks that do no training work.
    pub fn validate(&self) -> Result<()> {
        let key_err = |key: &str, msg: String| Error::Config(format!("[{key}] {msg}"));
        if self.schema_version != SCHEMA_VERSION {
            return Err(key_err(
                "schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        make_env(&self.env).map_err(|e| key_err("env", e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(key_err("seeds", "at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(key_err("seeds", "seeds must be distinct".into()));
        }
        if self.eval_episodes == 0 {
            return Err(key_err("eval_episodes", "must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(key_err("workers", "must be at least 1".into()));
        }
        if self.bc.num_demos == 0 || !(self.bc.ridge >= 0.0) {
            return Err(key_err("bc", "needs num_demos >= 1 and ridge >= 0".into()));
        }
        if self.dagger.episodes_per_iter == 0 || !(0.0..=1.0).contains(&self.dagger.beta) {
            return Err(key_err("dagger", "needs episodes_per_iter >= 1 and beta in [0, 1]".into()));
        }
        self.critiq.validate().map_err(|e| key_err("critiq", e.to_string()))?;
        self.retry.validate().map_err(|e| key_err("retry", e.to_string()))?;
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Rewrites a `[key] msg` validation error to point at the line defining `key`.
fn anchor(e: Error, text: &str, origin: &str) -> Error {
    let Error::Config(msg) = e else { return e };
    let Some(rest) = msg.strip_prefix('[') else {
        return Error::Config(format!("{origin}: {msg}"));
    };
    let Some((key, detail)) = rest.split_once("] ") else {
        return Error::Config(format!("{origin}: {msg}"));
    };
    let line = text
        .lines()
        .position(|l| {
            let l = l.trim_start();
            l == format!("[{key}]")
                || l.strip_prefix(key)
                    .is_some_and(|r| r.trim_start().starts_with('='))
        })
        .map_or(1, |i| i + 1);
    Error::Config(format!("{origin}:{line}: {key}: {detail}"))
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub env: Option<EnvConfig>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub episodes: Option<usize>,
}

impl Overrides {
    /// Flags beat the file, which beats built-in defaults.
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(e) = &self.env {
            cfg.env = e.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(n) = self.episodes {
            cfg.eval_episodes = n;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("command line: {m}")),
            other => other,
        })?;
        Ok(cfg)
    }
}
