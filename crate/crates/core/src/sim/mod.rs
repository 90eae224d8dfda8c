//! Toy autoregressive policy and environment for watching how GRPO and
//! λ-GRPO move probability mass around shared prefixes.
//!
//! The policy is tabular: next-token logits are looked up by the last few
//! tokens of the prefix. Updates follow the score-function gradient of the
//! token-mean surrogate with advantages held fixed.

mod config;
mod env;
mod experiment;
mod gradient;
mod policy;

pub use config::{parse_experiment, Experiment};
pub use env::ToyEnv;
pub use experiment::{
    expected_reward, exploitation_scenario, rollout_group, run_experiment, series_csv,
    ExploitationScenario, SimConfig, StepRecord,
};
pub use gradient::{
    analytic_gradient, finite_diff_check, token_coefficients, token_gradients, GradientTable,
    TokenGradient,
};
pub use policy::{ToyPolicy, DEFAULT_CONTEXT_ORDER};
