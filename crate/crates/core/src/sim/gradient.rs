use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::tree::ProcessTree;
use crate::types::{outcome_advantages, reward_stats, Group, PerToken, StdMode, DEFAULT_EPSILON};

use super::policy::ToyPolicy;

/// Gradient with respect to every touched logit row, keyed by context.
pub type GradientTable = BTreeMap<Vec<u32>, Vec<f64>>;

/// Weight of each token's ratio term in the surrogate: `a_i / N` for GRPO,
/// `a_i / (|λ^(i,t)|·N)` for λ-GRPO.
pub fn token_coefficients(group: &Group, objective: Objective, std_mode: StdMode) -> PerToken<f64> {
    let stats = reward_stats(group, std_mode, DEFAULT_EPSILON);
    let a = outcome_advantages(group, &stats);
    let n = group.total_tokens().max(1) as f64;
    match objective {
        Objective::Grpo => PerToken::from_fn(group, |i, _| a[i] / n),
        Objective::Lambda => {
            let tree = ProcessTree::build(group);
            let asg = tree.assign_tokens();
            PerToken::from_fn(group, |i, t| {
                a[i] / tree.node(asg.owner(i, t)).size() as f64 / n
            })
        }
    }
}

/// One token's contribution to the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGradient {
    pub i: usize,
    pub t: usize,
    pub context: Vec<u32>,
    pub grad: Vec<f64>,
}

/// Score-function contributions `c_{i,t}·∇ log π(g_{i,t} | context)`; at the
/// sampling policy the ratio's gradient equals the log-probability's.
pub fn token_gradients(policy: &ToyPolicy, group: &Group, objective: Objective, std_mode: StdMode) -> Vec<TokenGradient> {
    let coef = token_coefficients(group, objective, std_mode);
    let tau = policy.temperature();
    let mut out = Vec::with_capacity(group.total_tokens());
    for (i, traj) in group.trajectories().iter().enumerate() {
        for (t, &tok) in traj.tokens.iter().enumerate() {
            let ctx = policy.context(&traj.tokens[..t]);
            let c = coef[(i, t)];
            let grad = policy
                .probs(ctx)
                .into_iter()
                .enumerate()
                .map(|(j, p)| {
                    let onehot = if j as u32 == tok { 1.0 } else { 0.0 };
                    c * (onehot - p) / tau
                })
                .collect();
            out.push(TokenGradient {
                i,
                t,
                context: ctx.to_vec(),
                grad,
            });
        }
    }
    out
}

pub fn analytic_gradient(policy: &ToyPolicy, group: &Group, objective: Objective, std_mode: StdMode) -> GradientTable {
    let mut table = GradientTable::new();
    for tg in token_gradients(policy, group, objective, std_mode) {
        let row = table
            .entry(tg.context)
            .or_insert_with(|| vec![0.0; tg.grad.len()]);
        for (r, g) in row.iter_mut().zip(&tg.grad) {
            *r += g;
        }
    }
    table
}

/// Central differences of the surrogate `Σ c_{i,t}·π_θ/π_old` on every
/// touched logit, compared against [`analytic_gradient`]. Returns the
/// largest relative error, with denominator `max(|analytic|, 1e-12)`.
pub fn finite_diff_check(
    policy: &ToyPolicy,
    group: &Group,
    objective: Objective,
    std_mode: StdMode,
    h: f64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Config(format!("step h must lie in [1e-6, 1e-3], got {h}")));
    }
    let coef = token_coefficients(group, objective, std_mode);
    let analytic = analytic_gradient(policy, group, objective, std_mode);

    // Only tokens emitted under a context depend on that context's logits,
    // so each difference quotient needs just those tokens.
    let mut by_context: BTreeMap<Vec<u32>, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, traj) in group.trajectories().iter().enumerate() {
        for (t, &tok) in traj.tokens.iter().enumerate() {
            let ctx = policy.context(&traj.tokens[..t]);
            by_context
                .entry(ctx.to_vec())
                .or_default()
                .push((coef[(i, t)], tok as usize));
        }
    }

    // Shifting logit j by d moves log π(tok) by [tok = j]·d/τ − ln(1 + p_j(e^{d/τ} − 1)).
    // Evaluating the surrogate through this form avoids subtracting two
    // nearly equal log-probabilities.
    let tau = policy.temperature();
    let surrogate = |tokens: &[(f64, usize)], j: usize, p_j: f64, d: f64| -> f64 {
        let shift = (p_j * (d / tau).exp_m1()).ln_1p();
        crate::sum::sum(tokens.iter().map(|&(c, tok)| {
            let own = if tok == j { d / tau } else { 0.0 };
            c * (own - shift).exp_m1()
        }))
    };

    let mut worst: f64 = 0.0;
    for (ctx, tokens) in &by_context {
        let probs = policy.probs(ctx);
        let an = &analytic[ctx];
        for (j, &p_j) in probs.iter().enumerate() {
            let fd = (surrogate(tokens, j, p_j, h) - surrogate(tokens, j, p_j, -h)) / (2.0 * h);
            let err = (fd - an[j]).abs() / an[j].abs().max(1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
