//! Monte Carlo step rewards and step-level advantages.

use crate::sum;
use crate::tree::{ProcessNode, ProcessTree, TokenAssignment};
use crate::types::{Group, PerToken, RewardStats};

/// Mean outcome reward of the node's members.
pub fn step_reward(node: &ProcessNode, group: &Group) -> f64 {
    let trajs = group.trajectories();
    sum::sum(node.members.iter().map(|&m| trajs[m].reward)) / node.size() as f64
}

/// Per-token step rewards `R_{i,t}` and advantages `A_{i,t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAdvantages {
    pub token_reward: PerToken<f64>,
    pub token_advantage: PerToken<f64>,
}

/// Step advantage of a node, normalized by whole-group statistics.
pub fn node_advantage(node: &ProcessNode, group: &Group, stats: &RewardStats) -> f64 {
    let r = node.step_reward.unwrap_or_else(|| step_reward(node, group));
    stats.normalize(r)
}

pub fn step_advantages(
    tree: &ProcessTree,
    assignment: &TokenAssignment,
    group: &Group,
    stats: &RewardStats,
) -> StepAdvantages {
    let node_reward: Vec<f64> = tree
        .nodes()
        .iter()
        .map(|n| n.step_reward.unwrap_or_else(|| step_reward(n, group)))
        .collect();
    let token_reward = PerToken::from_fn(group, |i, t| node_reward[assignment.owner(i, t).0]);
    let token_advantage = PerToken::from_fn(group, |i, t| stats.normalize(token_reward[(i, t)]));
    StepAdvantages {
        token_reward,
        token_advantage,
    }
}
