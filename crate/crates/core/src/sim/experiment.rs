use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixtures::{example_tokens, EXAMPLE_REWARDS};
use crate::loss::{objective_grpo, objective_lambda, Objective, ObjectiveConfig};
use crate::tree::ProcessTree;
use crate::types::{outcome_advantages, reward_stats, Group, StdMode, Trajectory, DEFAULT_EPSILON};

use super::env::ToyEnv;
use super::gradient::analytic_gradient;
use super::policy::ToyPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub k: usize,
    pub steps: usize,
    pub learn_rate: f64,
    pub objective: Objective,
    pub std_mode: StdMode,
    /// Must be 0: the simulator has no reference policy.
    pub beta: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 6,
            steps: 100,
            learn_rate: 0.5,
            objective: Objective::Lambda,
            std_mode: StdMode::Sample,
            beta: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.beta != 0.0 {
            return Err(Error::Config("the simulator runs with beta = 0".into()));
        }
        if !self.learn_rate.is_finite() {
            return Err(Error::Config("learn_rate must be finite".into()));
        }
        Ok(())
    }
}

/// Samples `k` trajectories, recording each token's log-probability.
pub fn rollout_group(policy: &ToyPolicy, env: &ToyEnv, k: usize, seed: u64) -> Result<Group> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = env.max_len().min(policy.horizon());
    let trajectories = (0..k)
        .map(|_| {
            let mut seq = Vec::with_capacity(max_len);
            let mut logp = Vec::with_capacity(max_len);
            while seq.len() < max_len && !env.is_done(&seq) {
                let (tok, lp) = policy.sample(&seq, &mut rng);
                seq.push(tok);
                logp.push(lp);
            }
            let reward = env.reward(&seq);
            Trajectory::new(seq, reward).with_logps(Some(logp), None, None)
        })
        .collect();
    Group::new(format!("toy-{seed}"), trajectories)
}

/// Probability that a rollout ends as exactly `seq`.
pub fn sequence_prob(policy: &ToyPolicy, env: &ToyEnv, seq: &[u32]) -> f64 {
    if seq.len() > policy.horizon() || !env.is_complete(seq) {
        return 0.0;
    }
    policy.sequence_log_prob(seq).exp()
}

/// Exact expectation: every rollout not in the table earns the default.
pub fn expected_reward(policy: &ToyPolicy, env: &ToyEnv) -> f64 {
    let base = env.default_reward();
    base + env
        .rewards()
        .iter()
        .map(|(s, &r)| sequence_prob(policy, env, s) * (r - base))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub expected_reward: f64,
    /// Probability of the highest-reward table entry.
    pub best_prob: f64,
    /// Surrogate objective on this step's sampled group.
    pub objective: f64,
}

/// Runs `config.steps` sample-and-update rounds from `policy`. Each record
/// describes the policy before that round's update.
pub fn run_experiment(policy: &ToyPolicy, env: &ToyEnv, config: &SimConfig) -> Result<Vec<StepRecord>> {
    config.validate()?;
    let mut policy = policy.clone();
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let obj_config = ObjectiveConfig::new(0.0, true)?;
    let best = env.best().map(|(s, _)| s.to_vec());
    let mut out = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let group = rollout_group(&policy, env, config.k, seeds.next_u64())?;
        let stats = reward_stats(&group, config.std_mode, DEFAULT_EPSILON);
        let a = outcome_advantages(&group, &stats);
        let objective = match config.objective {
            Objective::Grpo => objective_grpo(&group, &a, &obj_config)?,
            Objective::Lambda => {
                let tree = ProcessTree::build(&group);
                objective_lambda(&group, &tree, &tree.assign_tokens(), &a, &obj_config)?
            }
        }
        .value;
        out.push(StepRecord {
            step,
            expected_reward: expected_reward(&policy, env),
            best_prob: best.as_ref().map_or(0.0, |s| sequence_prob(&policy, env, s)),
            objective,
        });
        let grad = analytic_gradient(&policy, &group, config.objective, config.std_mode);
        policy.apply(&grad, config.learn_rate);
    }
    Ok(out)
}

pub fn series_csv(records: &[StepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// The six-trajectory toy group where the best trajectory shares a
/// four-token prefix with two zero-reward ones, under a policy biased
/// toward exactly those sequences.
#[derive(Debug, Clone)]
pub struct ExploitationScenario {
    pub policy: ToyPolicy,
    pub group: Group,
    /// Members of the shared-prefix process set.
    pub members: Vec<usize>,
    pub prefix: Vec<u32>,
}

pub fn exploitation_scenario() -> ExploitationScenario {
    let tokens = example_tokens();
    let mut policy = ToyPolicy::new(10, 9, 1.0).expect("valid policy");
    for seq in &tokens {
        for t in 0..seq.len() {
            let ctx = policy.context(&seq[..t]).to_vec();
            let mut row = policy.logits(&ctx);
            row[seq[t] as usize] = 2.0;
            policy.set_logits(&ctx, row).expect("valid logits");
        }
    }
    let trajectories = tokens
        .into_iter()
        .zip(EXAMPLE_REWARDS)
        .map(|(seq, r)| {
            let lp = (0..seq.len()).map(|t| policy.log_prob(&seq[..t], seq[t])).collect();
            Trajectory::new(seq, r).with_logps(Some(lp), None, None)
        })
        .collect();
    let group = Group::new("exploitation", trajectories).expect("valid group");
    ExploitationScenario {
        policy,
        group,
        members: vec![2, 3, 4],
        prefix: vec![7, 7, 7, 7],
    }
}

impl ExploitationScenario {
    pub fn prefix_prob(&self, policy: &ToyPolicy) -> f64 {
        policy.sequence_log_prob(&self.prefix).exp()
    }

    /// Contexts visited only by the shared-prefix set's own tokens.
    pub fn prefix_contexts(&self) -> Vec<Vec<u32>> {
        (1..self.prefix.len())
            .map(|t| self.policy.context(&self.prefix[..t]).to_vec())
            .collect()
    }

    pub fn update(&self, objective: Objective, learn_rate: f64) -> ToyPolicy {
        let grad = analytic_gradient(&self.policy, &self.group, objective, StdMode::Sample);
        let mut next = self.policy.clone();
        next.apply(&grad, learn_rate);
        next
    }
}
