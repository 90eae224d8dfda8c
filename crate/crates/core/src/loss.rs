//! Token-level objectives: standard GRPO, its PRM form, and the
//! process-set-normalized λ variant.
//!
//! All three share the per-token shape `P_{i,t}·adv − β·D_{i,t}` averaged
//! over every token in the group. Values are surrogate objectives to be
//! maximized; [`ObjectiveReport::loss`] gives the negation for trainers
//! that minimize.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::step::StepAdvantages;
use crate::sum::Neumaier;
use crate::tree::{ProcessTree, TokenAssignment};
use crate::types::{Group, PerToken};

pub const DEFAULT_BETA: f64 = 0.04;

/// Which token weighting a trainer should apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Grpo,
    Lambda,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Grpo => "grpo",
            Objective::Lambda => "lambda",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Objective::Grpo),
            "lambda" => Ok(Objective::Lambda),
            other => Err(Error::Config(format!("unknown objective {other:?} (grpo|lambda)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    /// KL coefficient multiplying `D_{i,t}`. Zero disables the KL term and
    /// the need for reference log-probabilities.
    pub beta: f64,
    /// Treat every importance ratio as exactly 1 (one update per batch).
    pub assume_unit_ratio: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            assume_unit_ratio: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn new(beta: f64, assume_unit_ratio: bool) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self {
            beta,
            assume_unit_ratio,
        })
    }

    /// Checks that `group` carries the log-probabilities this configuration needs.
    pub fn check(&self, group: &Group) -> Result<()> {
        for (i, traj) in group.trajectories().iter().enumerate() {
            if !self.assume_unit_ratio && (traj.logp_new.is_none() || traj.logp_old.is_none()) {
                return Err(Error::Config(format!(
                    "trajectory {i}: ratio terms need logp and logp_old (or assume a unit ratio)"
                )));
            }
            if self.beta > 0.0 && (traj.logp_new.is_none() || traj.logp_ref.is_none()) {
                return Err(Error::Config(format!(
                    "trajectory {i}: beta > 0 needs logp and logp_ref (or set beta to 0)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub value: f64,
    pub per_token_terms: PerToken<f64>,
    /// Σ of the (weighted) `P·adv` parts.
    pub advantage_total: f64,
    /// Σ of the (weighted) `D` parts, before multiplying by β.
    pub kl_total: f64,
    pub total_tokens: usize,
}

impl ObjectiveReport {
    /// Minimization form of the objective.
    pub fn loss(&self) -> f64 {
        -self.value
    }
}

/// `P_{i,t} = π_θ / π_θ_old` per token.
pub fn ratio_terms(group: &Group, config: &ObjectiveConfig) -> Result<PerToken<f64>> {
    if config.assume_unit_ratio {
        return Ok(PerToken::from_fn(group, |_, _| 1.0));
    }
    let trajs = group.trajectories();
    for (i, traj) in trajs.iter().enumerate() {
        if traj.logp_new.is_none() || traj.logp_old.is_none() {
            return Err(Error::Config(format!(
                "trajectory {i}: ratio terms need logp and logp_old"
            )));
        }
    }
    Ok(PerToken::from_fn(group, |i, t| {
        let new = trajs[i].logp_new.as_ref().unwrap()[t];
        let old = trajs[i].logp_old.as_ref().unwrap()[t];
        (new - old).exp()
    }))
}

/// k3 estimator `x − ln x − 1` with `x = π_ref / π_θ`.
pub fn k3(logp_ref: f64, logp_new: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp_m1() - d
}

/// `D_{i,t}` per token; identically zero when β = 0.
pub fn kl_terms(group: &Group, config: &ObjectiveConfig) -> Result<PerToken<f64>> {
    if config.beta == 0.0 {
        return Ok(PerToken::from_fn(group, |_, _| 0.0));
    }
    let trajs = group.trajectories();
    for (i, traj) in trajs.iter().enumerate() {
        if traj.logp_new.is_none() || traj.logp_ref.is_none() {
            return Err(Error::Config(format!(
                "trajectory {i}: beta > 0 needs logp and logp_ref"
            )));
        }
    }
    Ok(PerToken::from_fn(group, |i, t| {
        k3(
            trajs[i].logp_ref.as_ref().unwrap()[t],
            trajs[i].logp_new.as_ref().unwrap()[t],
        )
    }))
}

/// Shared evaluation: `adv(i, t)` supplies the advantage and `scale(i, t)`
/// divides the whole token term.
fn evaluate(
    group: &Group,
    config: &ObjectiveConfig,
    adv: impl Fn(usize, usize) -> f64,
    scale: impl Fn(usize, usize) -> f64,
) -> Result<ObjectiveReport> {
    let ratio = ratio_terms(group, config)?;
    let kl = kl_terms(group, config)?;
    let mut adv_acc = Neumaier::new();
    let mut kl_acc = Neumaier::new();
    let mut term_acc = Neumaier::new();
    let per_token_terms = PerToken::from_fn(group, |i, t| {
        let s = scale(i, t);
        let pa = ratio[(i, t)] * adv(i, t);
        let d = kl[(i, t)];
        let term = (pa - config.beta * d) / s;
        adv_acc.add(pa / s);
        kl_acc.add(d / s);
        term_acc.add(term);
        term
    });
    let total_tokens = group.total_tokens();
    let value = if total_tokens == 0 {
        0.0
    } else {
        term_acc.total() / total_tokens as f64
    };
    Ok(ObjectiveReport {
        value,
        per_token_terms,
        advantage_total: adv_acc.total(),
        kl_total: kl_acc.total(),
        total_tokens,
    })
}

/// Standard token-mean GRPO objective with outcome advantages `a_i`.
pub fn objective_grpo(
    group: &Group,
    advantages: &[f64],
    config: &ObjectiveConfig,
) -> Result<ObjectiveReport> {
    check_len(group, advantages)?;
    evaluate(group, config, |i, _| advantages[i], |_, _| 1.0)
}

/// The same objective with each token's advantage replaced by the step
/// advantage of its owning process set.
pub fn objective_prm(
    group: &Group,
    step: &StepAdvantages,
    config: &ObjectiveConfig,
) -> Result<ObjectiveReport> {
    evaluate(group, config, |i, t| step.token_advantage[(i, t)], |_, _| 1.0)
}

/// GRPO with every token term divided by the size of its owning process set.
pub fn objective_lambda(
    group: &Group,
    tree: &ProcessTree,
    assignment: &TokenAssignment,
    advantages: &[f64],
    config: &ObjectiveConfig,
) -> Result<ObjectiveReport> {
    check_len(group, advantages)?;
    evaluate(
        group,
        config,
        |i, _| advantages[i],
        |i, t| tree.node(assignment.owner(i, t)).size() as f64,
    )
}

/// `1 / |λ^(i,t)|` for every token.
pub fn lambda_weights(tree: &ProcessTree, assignment: &TokenAssignment) -> PerToken<f64> {
    PerToken::from_rows(
        assignment
            .owners()
            .rows()
            .iter()
            .map(|row| row.iter().map(|&id| 1.0 / tree.node(id).size() as f64).collect())
            .collect(),
    )
}

fn check_len(group: &Group, advantages: &[f64]) -> Result<()> {
    if advantages.len() != group.k() {
        return Err(Error::InvalidGroup(format!(
            "{} advantages for {} trajectories",
            advantages.len(),
            group.k()
        )));
    }
    Ok(())
}
