use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cmdp::Observation;

/// Per-observation teacher-likeness score with a query threshold.
///
/// `score(o) = (n_t + s) / (n_t + n_s + 2s)` where `n_t`, `n_s` count the
/// observation in teacher and student data and `s` is the Laplace constant.
/// This is the exact minimiser of the per-observation logistic loss with
/// teacher data labelled 1, so high scores mean "looks like the teacher".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub kappa: f64,
    pub smoothing: f64,
    counts: BTreeMap<Observation, (u64, u64)>,
}

impl Discriminator {
    pub fn new(kappa: f64, smoothing: f64) -> Self {
        assert!(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0, 1)");
        assert!(smoothing >= 0.0, "smoothing must be non-negative");
        Discriminator {
            kappa,
            smoothing,
            counts: BTreeMap::new(),
        }
    }

    pub fn score(&self, obs: &Observation) -> f64 {
        let (t, s) = self.counts.get(obs).copied().unwrap_or((0, 0));
        let denom = (t + s) as f64 + 2.0 * self.smoothing;
        if denom == 0.0 {
            return 0.5;
        }
        (t as f64 + self.smoothing) / denom
    }

    /// True when the observation falls below the query threshold.
    pub fn is_critical(&self, obs: &Observation) -> bool {
        self.score(obs) < self.kappa
    }

    pub fn counts(&self, obs: &Observation) -> (u64, u64) {
        self.counts.get(obs).copied().unwrap_or((0, 0))
    }

    /// Mean score along a sequence of observations; 0.5 for an empty one.
    pub fn mean_score<'a>(&self, obs: impl IntoIterator<Item = &'a Observation>) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for o in obs {
            sum += self.score(o);
            n += 1;
        }
        if n == 0 {
            0.5
        } else {
            sum / n as f64
        }
    }
}

/// Refits the discriminator from scratch on fresh teacher and student
/// observation multisets, keeping its threshold and smoothing.
pub fn train_discriminator<'a, 'b>(
    d: &Discriminator,
    teacher_obs: impl IntoIterator<Item = &'a Observation>,
    student_obs: impl IntoIterator<Item = &'b Observation>,
) -> Discriminator {
    let mut counts: BTreeMap<Observation, (u64, u64)> = BTreeMap::new();
    for o in teacher_obs {
        counts.entry(*o).or_default().0 += 1;
    }
    for o in student_obs {
        counts.entry(*o).or_default().1 += 1;
    }
    Discriminator {
        kappa: d.kappa,
        smoothing: d.smoothing,
        counts,
    }
}
