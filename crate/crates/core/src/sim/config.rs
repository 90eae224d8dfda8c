//! Flat `key = value` experiment files.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! k = 6
//! steps = 50
//! learn_rate = 0.5
//! objective = lambda          # grpo | lambda
//! std_mode = sample           # sample | population
//! beta = 0
//! vocab_size = 10
//! horizon = 9
//! temperature = 1.0
//! context_order = 4
//! max_len = 9
//! terminal_token = 0          # optional
//! default_reward = 0
//! reward.7,7,7,7,3,3,0 = 1.0  # reward of a complete sequence
//! logits.root = 0 0 0 0 0 0 2 2 2 0
//! logits.7,7 = 0 0 0 0 0 0 0 2 0 0
//! ```

use crate::error::{Error, Result};
use crate::types::StdMode;

use super::env::ToyEnv;
use super::experiment::SimConfig;
use super::policy::{ToyPolicy, DEFAULT_CONTEXT_ORDER};

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: SimConfig,
    pub policy: ToyPolicy,
    pub env: ToyEnv,
}

pub fn parse_experiment(text: &str) -> Result<Experiment> {
    let mut config = SimConfig::default();
    let mut vocab_size = 4u32;
    let mut horizon = 8usize;
    let mut temperature = 1.0;
    let mut context_order = DEFAULT_CONTEXT_ORDER;
    let mut max_len = None;
    let mut terminal_token = None;
    let mut default_reward = 0.0;
    let mut rewards = Vec::new();
    let mut logits = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Parse { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        macro_rules! num {
            () => {
                value.parse().map_err(|_| err(format!("bad value for {key}: {value:?}")))?
            };
        }
        if let Some(seq) = key.strip_prefix("reward.") {
            rewards.push((line_no, tokens(seq).map_err(err)?, num!()));
            continue;
        }
        if let Some(ctx) = key.strip_prefix("logits.") {
            let ctx = if ctx == "root" { Vec::new() } else { tokens(ctx).map_err(err)? };
            let row = value
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err(format!("bad logits {value:?}")))?;
            logits.push((line_no, ctx, row));
            continue;
        }
        match key {
            "seed" => config.seed = num!(),
            "k" => config.k = num!(),
            "steps" => config.steps = num!(),
            "learn_rate" => config.learn_rate = num!(),
            "beta" => config.beta = num!(),
            "objective" => config.objective = value.parse().map_err(|e: Error| err(e.to_string()))?,
            "std_mode" => {
                config.std_mode = match value {
                    "sample" => StdMode::Sample,
                    "population" => StdMode::Population,
                    _ => return Err(err(format!("unknown std_mode {value:?}"))),
                }
            }
            "vocab_size" => vocab_size = num!(),
            "horizon" => horizon = num!(),
            "temperature" => temperature = num!(),
            "context_order" => context_order = num!(),
            "max_len" => max_len = Some(num!()),
            "terminal_token" => terminal_token = Some(num!()),
            "default_reward" => default_reward = num!(),
            _ => return Err(err(format!("unknown key {key:?}"))),
        }
    }

    config.validate()?;
    let mut policy = ToyPolicy::new(vocab_size, horizon, temperature)?.with_context_order(context_order);
    for (line, ctx, row) in logits {
        policy
            .set_logits(&ctx, row)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    let mut env = ToyEnv::new(max_len.unwrap_or(horizon), terminal_token, default_reward)?;
    for (line, seq, r) in rewards {
        env.insert_reward(seq, r)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    Ok(Experiment { config, policy, env })
}

fn tokens(s: &str) -> std::result::Result<Vec<u32>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| format!("bad token list {s:?}")))
        .collect()
}
