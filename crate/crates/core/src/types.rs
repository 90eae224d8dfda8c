//! Trajectories, groups and outcome-level advantages.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum;

/// Default degeneracy guard on the reward standard deviation.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// One sampled completion: token ids, its outcome reward, and optional
/// per-token natural-log probabilities under the current, rollout and
/// reference policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<u32>,
    pub reward: f64,
    pub logp_new: Option<Vec<f64>>,
    pub logp_old: Option<Vec<f64>>,
    pub logp_ref: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(tokens: Vec<u32>, reward: f64) -> Self {
        Self {
            tokens,
            reward,
            logp_new: None,
            logp_old: None,
            logp_ref: None,
        }
    }

    pub fn with_logps(
        mut self,
        logp_new: Option<Vec<f64>>,
        logp_old: Option<Vec<f64>>,
        logp_ref: Option<Vec<f64>>,
    ) -> Self {
        self.logp_new = logp_new;
        self.logp_old = logp_old;
        self.logp_ref = logp_ref;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |message: String| Error::InvalidTrajectory { index, message };
        if !self.reward.is_finite() {
            return Err(bad(format!("non-finite reward {}", self.reward)));
        }
        for (name, lp) in [
            ("logp", &self.logp_new),
            ("logp_old", &self.logp_old),
            ("logp_ref", &self.logp_ref),
        ] {
            let Some(lp) = lp else { continue };
            if lp.len() != self.tokens.len() {
                return Err(bad(format!(
                    "{name} has length {} but there are {} tokens",
                    lp.len(),
                    self.tokens.len()
                )));
            }
            if let Some((t, v)) = lp.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
                return Err(bad(format!("{name}[{t}] = {v} is not a finite log-probability")));
            }
        }
        Ok(())
    }
}

/// The k trajectories sampled for a single query.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    query_id: String,
    step: Option<u64>,
    trajectories: Vec<Trajectory>,
}

impl Group {
    pub fn new(query_id: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(Error::InvalidGroup(format!(
                "a group needs at least 2 trajectories, got {}",
                trajectories.len()
            )));
        }
        for (i, traj) in trajectories.iter().enumerate() {
            traj.validate(i)?;
        }
        Ok(Self {
            query_id: query_id.into(),
            step: None,
            trajectories,
        })
    }

    /// Convenience constructor for groups without log-probabilities.
    pub fn from_tokens(
        query_id: impl Into<String>,
        tokens: Vec<Vec<u32>>,
        rewards: &[f64],
    ) -> Result<Self> {
        if tokens.len() != rewards.len() {
            return Err(Error::InvalidGroup(format!(
                "{} token sequences but {} rewards",
                tokens.len(),
                rewards.len()
            )));
        }
        let trajectories = tokens
            .into_iter()
            .zip(rewards)
            .map(|(t, &r)| Trajectory::new(t, r))
            .collect();
        Self::new(query_id, trajectories)
    }

    pub fn with_step(mut self, step: Option<u64>) -> Self {
        self.step = step;
        self
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn step(&self) -> Option<u64> {
        self.step
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    pub fn rewards(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.trajectories.iter().map(|t| t.reward)
    }

    pub fn lengths(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.trajectories.iter().map(Trajectory::len)
    }

    pub fn total_tokens(&self) -> usize {
        self.lengths().sum()
    }

    pub fn max_len(&self) -> usize {
        self.lengths().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdMode {
    /// Divisor k - 1.
    #[default]
    Sample,
    /// Divisor k.
    Population,
}

impl fmt::Display for StdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StdMode::Sample => f.write_str("sample"),
            StdMode::Population => f.write_str("population"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardStats {
    pub mean: f64,
    pub std: f64,
    pub std_mode: StdMode,
    pub epsilon: f64,
}

impl RewardStats {
    /// True when the spread is too small to normalize by.
    pub fn is_degenerate(&self) -> bool {
        self.std < self.epsilon
    }

    /// `(x - mean) / std`, or 0 for a degenerate group.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (x - self.mean) / self.std
        }
    }
}

pub fn reward_stats(group: &Group, std_mode: StdMode, epsilon: f64) -> RewardStats {
    let k = group.k() as f64;
    let mean = sum::sum(group.rewards()) / k;
    let ss = sum::sum(group.rewards().map(|r| (r - mean) * (r - mean)));
    let divisor = match std_mode {
        StdMode::Sample => k - 1.0,
        StdMode::Population => k,
    };
    RewardStats {
        mean,
        std: (ss / divisor).sqrt(),
        std_mode,
        epsilon,
    }
}

/// Group-normalized outcome advantages `a_i`.
pub fn outcome_advantages(group: &Group, stats: &RewardStats) -> Vec<f64> {
    group.rewards().map(|r| stats.normalize(r)).collect()
}

/// A value for every token of every trajectory, indexed `[i][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerToken<T>(Vec<Vec<T>>);

impl<T> PerToken<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        Self(rows)
    }

    /// Builds a map shaped like `group` by evaluating `f(i, t)`.
    pub fn from_fn(group: &Group, mut f: impl FnMut(usize, usize) -> T) -> Self {
        Self(
            group
                .lengths()
                .enumerate()
                .map(|(i, len)| (0..len).map(|t| f(i, t)).collect())
                .collect(),
        )
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.0[i]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.0
    }

    pub fn into_rows(self) -> Vec<Vec<T>> {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(t, v)| ((i, t), v)))
    }
}

impl<T> Index<(usize, usize)> for PerToken<T> {
    type Output = T;

    fn index(&self, (i, t): (usize, usize)) -> &T {
        &self.0[i][t]
    }
}
