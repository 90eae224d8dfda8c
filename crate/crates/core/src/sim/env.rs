use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Outcome rewards for complete token sequences. A rollout ends when it
/// emits the terminal token or reaches `max_len`; sequences missing from
/// the table earn `default_reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEnv {
    rewards: BTreeMap<Vec<u32>, f64>,
    default_reward: f64,
    terminal_token: Option<u32>,
    max_len: usize,
}

impl ToyEnv {
    pub fn new(max_len: usize, terminal_token: Option<u32>, default_reward: f64) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if !default_reward.is_finite() {
            return Err(Error::Config("default_reward must be finite".into()));
        }
        Ok(Self {
            rewards: BTreeMap::new(),
            default_reward,
            terminal_token,
            max_len,
        })
    }

    pub fn with_reward(mut self, seq: Vec<u32>, reward: f64) -> Result<Self> {
        self.insert_reward(seq, reward)?;
        Ok(self)
    }

    pub fn insert_reward(&mut self, seq: Vec<u32>, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::Config(format!("reward for {seq:?} must be finite")));
        }
        if !self.is_complete(&seq) {
            return Err(Error::Config(format!(
                "{seq:?} is not a complete rollout (must end with the terminal token or have length {})",
                self.max_len
            )));
        }
        self.rewards.insert(seq, reward);
        Ok(())
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn terminal_token(&self) -> Option<u32> {
        self.terminal_token
    }

    pub fn default_reward(&self) -> f64 {
        self.default_reward
    }

    pub fn rewards(&self) -> &BTreeMap<Vec<u32>, f64> {
        &self.rewards
    }

    pub fn reward(&self, seq: &[u32]) -> f64 {
        self.rewards.get(seq).copied().unwrap_or(self.default_reward)
    }

    pub fn is_done(&self, seq: &[u32]) -> bool {
        seq.len() >= self.max_len || (self.terminal_token.is_some() && seq.last() == self.terminal_token.as_ref())
    }

    /// Whether `seq` is exactly a sequence a rollout can end with.
    pub fn is_complete(&self, seq: &[u32]) -> bool {
        if seq.is_empty() || seq.len() > self.max_len {
            return false;
        }
        let body = &seq[..seq.len() - 1];
        if let Some(term) = self.terminal_token {
            if body.contains(&term) {
                return false;
            }
        }
        self.is_done(seq)
    }

    /// Highest-reward table entry (first in sequence order on ties).
    pub fn best(&self) -> Option<(&[u32], f64)> {
        self.rewards
            .iter()
            .fold(None, |best: Option<(&[u32], f64)>, (s, &r)| match best {
                Some((_, br)) if br >= r => best,
                _ => Some((s.as_slice(), r)),
            })
    }
}
