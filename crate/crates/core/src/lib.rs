//! Explicit process-reward structure of group-relative policy optimization.
//!
//! Groups of sampled completions are organized into process-set trees (sets
//! of completions sharing a token prefix). Each tree node carries a Monte
//! Carlo step reward, from which step-level advantages follow. The crate
//! evaluates the token-mean GRPO objective, its step-level (PRM) form and the
//! λ-normalized variant, cross-checks their algebraic identities, computes
//! tree diagnostics, and runs a small tabular policy simulator.

pub mod error;
pub mod export;
pub mod fixtures;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod sim;
pub mod step;
pub mod sum;
pub mod tree;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
pub use loss::{
    lambda_weights, objective_grpo, objective_lambda, objective_prm, ObjectiveConfig,
    ObjectiveReport,
};
pub use step::{step_advantages, step_reward, StepAdvantages};
pub use tree::{build_process_tree, NodeId, ProcessNode, ProcessTree, TokenAssignment};
pub use types::{outcome_advantages, reward_stats, Group, PerToken, RewardStats, StdMode, Trajectory};
