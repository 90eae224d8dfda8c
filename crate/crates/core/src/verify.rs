//! Numerical verification of the GRPO ⇔ PRM equivalence and the identities
//! behind it, plus a seeded generator of groups with forced prefix overlap.
//!
//! Two independent evaluation routes are compared for each group:
//!
//! * the GRPO side sums `P·a_i − β·D` token by token and never looks at the
//!   process tree;
//! * the PRM side walks the tree node by node, deriving each node's
//!   advantage from its Monte Carlo step reward, and never reads the
//!   outcome advantages.
//!
//! Relative gaps are measured against the magnitude of the terms being
//! summed (Σ|P·adv| + β·Σ|D|), not the possibly cancelling sum itself.

use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{kl_terms, objective_grpo, objective_lambda, ratio_terms, ObjectiveConfig};
use crate::step::{node_advantage, step_advantages};
use crate::sum::Neumaier;
use crate::tree::ProcessTree;
use crate::types::{outcome_advantages, reward_stats, Group, StdMode, Trajectory, DEFAULT_EPSILON};

/// Probability of each injected degenerate draw (duplicate, exact prefix).
pub const DEGENERATE_RATE: f64 = 0.05;
pub const DEFAULT_THEOREM_TOL: f64 = 1e-9;
pub const DEFAULT_IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardDist {
    Bernoulli,
    Uniform,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogpMode {
    Absent,
    /// Log-probabilities are a function of the token prefix, so members of a
    /// process set agree on them as a real policy would.
    RandomConsistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub seed: u64,
    pub k_range: RangeInclusive<usize>,
    pub length_range: RangeInclusive<usize>,
    pub vocab_size: u32,
    /// Probability that a new trajectory copies a prefix of an earlier one
    /// before diverging.
    pub fork_bias: f64,
    pub reward_dist: RewardDist,
    pub logp_mode: LogpMode,
    /// Mix in duplicates and exact prefixes at [`DEGENERATE_RATE`] each.
    pub inject_degenerate: bool,
    /// Give every freshly drawn trajectory a different first token.
    pub distinct_first_tokens: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            k_range: 2..=16,
            length_range: 1..=64,
            vocab_size: 8,
            fork_bias: 0.5,
            reward_dist: RewardDist::Bernoulli,
            logp_mode: LogpMode::RandomConsistent,
            inject_degenerate: true,
            distinct_first_tokens: false,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k_range.is_empty() || *self.k_range.start() < 2 {
            return bad("k_range must be nonempty with k >= 2");
        }
        if self.length_range.is_empty() {
            return bad("length_range must be nonempty");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.fork_bias) {
            return bad("fork_bias must lie in [0, 1]");
        }
        if self.distinct_first_tokens
            && (*self.k_range.end() > self.vocab_size as usize || *self.length_range.start() == 0)
        {
            return bad("distinct first tokens need vocab_size >= k and nonempty trajectories");
        }
        Ok(())
    }
}

/// Deterministic in `(params, index)`.
pub fn generate_random_group(params: &GenParams, index: u64) -> Result<Group> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index);

    let vocab = params.vocab_size;
    let k = rng.gen_range(params.k_range.clone());
    let mut firsts: Vec<u32> = (0..vocab).collect();
    firsts.shuffle(&mut rng);

    let mut seqs: Vec<Vec<u32>> = Vec::with_capacity(k);
    for j in 0..k {
        let len = rng.gen_range(params.length_range.clone());
        let roll: f64 = rng.gen();
        let seq = if j > 0 && params.inject_degenerate && roll < DEGENERATE_RATE {
            seqs[rng.gen_range(0..j)].clone()
        } else if j > 0 && params.inject_degenerate && roll < 2.0 * DEGENERATE_RATE {
            let src = &seqs[rng.gen_range(0..j)];
            let cut = rng.gen_range(0..=src.len());
            src[..cut].to_vec()
        } else if j > 0 && rng.gen::<f64>() < params.fork_bias {
            let src = &seqs[rng.gen_range(0..j)];
            if src.is_empty() || len == 0 {
                fresh(&mut rng, len, vocab)
            } else {
                let fork = rng.gen_range(1..=src.len().min(len));
                let mut seq = src[..fork].to_vec();
                while seq.len() < len {
                    let mut tok = rng.gen_range(0..vocab);
                    if seq.len() == fork && src.get(fork) == Some(&tok) {
                        tok = (tok + rng.gen_range(1..vocab)) % vocab;
                    }
                    seq.push(tok);
                }
                seq
            }
        } else {
            let mut seq = fresh(&mut rng, len, vocab);
            if params.distinct_first_tokens {
                seq[0] = firsts[j];
            }
            seq
        };
        seqs.push(seq);
    }

    let rewards: Vec<f64> = (0..k)
        .map(|_| match params.reward_dist {
            RewardDist::Bernoulli => f64::from(u8::from(rng.gen_bool(0.5))),
            RewardDist::Uniform => rng.gen(),
            RewardDist::Constant => 1.0,
        })
        .collect();

    let trajectories = match params.logp_mode {
        LogpMode::Absent => seqs
            .into_iter()
            .zip(rewards)
            .map(|(s, r)| Trajectory::new(s, r))
            .collect(),
        LogpMode::RandomConsistent => prefix_consistent_logps(&mut rng, seqs, &rewards),
    };
    Group::new(format!("random-{}-{index}", params.seed), trajectories)
}

fn fresh(rng: &mut ChaCha8Rng, len: usize, vocab: u32) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

/// Draws (new, old, ref) log-probabilities once per distinct prefix.
fn prefix_consistent_logps(
    rng: &mut ChaCha8Rng,
    seqs: Vec<Vec<u32>>,
    rewards: &[f64],
) -> Vec<Trajectory> {
    // (prefix id, token) -> prefix id of the extended prefix; id 0 is empty.
    let mut interned: HashMap<(usize, u32), usize> = HashMap::new();
    let mut values: Vec<[f64; 3]> = vec![[0.0; 3]];
    seqs.into_iter()
        .zip(rewards)
        .map(|(seq, &r)| {
            let mut prefix = 0;
            let mut lps = [vec![], vec![], vec![]];
            for &tok in &seq {
                prefix = *interned.entry((prefix, tok)).or_insert_with(|| {
                    let new = -4.0 * rng.gen::<f64>();
                    let old = (new + rng.gen_range(-0.3..0.3)).min(0.0);
                    let reference = (new + rng.gen_range(-0.3..0.3)).min(0.0);
                    values.push([new, old, reference]);
                    values.len() - 1
                });
                for (lp, v) in lps.iter_mut().zip(values[prefix]) {
                    lp.push(v);
                }
            }
            let [new, old, reference] = lps;
            Trajectory::new(seq, r).with_logps(Some(new), Some(old), Some(reference))
        })
        .collect()
}

/// Worst gap observed by one check on one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub tol: f64,
}

impl CheckResult {
    fn new(check: &str, tol: f64) -> Self {
        Self {
            check: check.to_string(),
            abs_gap: 0.0,
            rel_gap: 0.0,
            tol,
        }
    }

    fn observe(&mut self, lhs: f64, rhs: f64, scale: f64) {
        let abs = (lhs - rhs).abs();
        let rel = if abs == 0.0 {
            0.0
        } else {
            abs / scale.max(lhs.abs()).max(rhs.abs()).max(1e-30)
        };
        self.abs_gap = self.abs_gap.max(abs);
        // NaN must never pass.
        self.rel_gap = if rel.is_nan() { f64::INFINITY } else { self.rel_gap.max(rel) };
    }

    pub fn passed(&self) -> bool {
        self.rel_gap <= self.tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    pub std_mode: StdMode,
    pub epsilon: f64,
    pub theorem_tol: f64,
    pub identity_tol: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            std_mode: StdMode::Sample,
            epsilon: DEFAULT_EPSILON,
            theorem_tol: DEFAULT_THEOREM_TOL,
            identity_tol: DEFAULT_IDENTITY_TOL,
        }
    }
}

/// Compares the token-sum GRPO objective against the node-enumerated PRM
/// objective.
pub fn verify_theorem1(
    group: &Group,
    config: &ObjectiveConfig,
    std_mode: StdMode,
    epsilon: f64,
    tol: f64,
) -> Result<CheckResult> {
    let ratio = ratio_terms(group, config)?;
    let kl = kl_terms(group, config)?;
    let stats = reward_stats(group, std_mode, epsilon);
    let n = group.total_tokens().max(1) as f64;

    // GRPO side: outcome advantages, no tree.
    let a = outcome_advantages(group, &stats);
    let grpo = objective_grpo(group, &a, config)?.value;
    let mut scale = Neumaier::new();
    for ((i, t), p) in ratio.iter() {
        scale.add((p * a[i]).abs() + config.beta * kl[(i, t)].abs());
    }

    // PRM side: node enumeration, step rewards only.
    let tree = ProcessTree::build(group);
    let mut prm = Neumaier::new();
    for node in tree.nodes() {
        let adv = node_advantage(node, group, &stats);
        for t in node.span_start..node.span_end {
            for &m in &node.members {
                prm.add(ratio[(m, t)] * adv - config.beta * kl[(m, t)]);
            }
        }
    }
    let prm = prm.total() / n;

    let mut out = CheckResult::new("theorem1", tol);
    out.observe(grpo, prm, scale.total() / n);
    Ok(out)
}

/// Checks, at every node and position, the per-process-set sum identity, the
/// partition (X_t) form of both objectives, and the |λ| scaling between the
/// GRPO and λ-GRPO token terms.
pub fn verify_proof_identities(
    group: &Group,
    config: &ObjectiveConfig,
    std_mode: StdMode,
    epsilon: f64,
    tol: f64,
) -> Result<Vec<CheckResult>> {
    let ratio = ratio_terms(group, config)?;
    let kl = kl_terms(group, config)?;
    let beta = config.beta;
    let stats = reward_stats(group, std_mode, epsilon);
    let a = outcome_advantages(group, &stats);
    let tree = ProcessTree::build(group);
    let asg = tree.assign_tokens();
    let step = step_advantages(&tree, &asg, group, &stats);
    let n = group.total_tokens().max(1) as f64;

    // Per process set, per position in its span.
    let mut per_node = CheckResult::new("per_node_sum", tol);
    for node in tree.nodes() {
        let size = node.size() as f64;
        let node_adv = node_advantage(node, group, &stats);
        for t in node.span_start..node.span_end {
            let rep = node.members[0];
            let rhs = size * (ratio[(rep, t)] * node_adv - beta * kl[(rep, t)]);
            let mut prm = Neumaier::new();
            let mut grpo = Neumaier::new();
            let mut scale = Neumaier::new();
            for &m in &node.members {
                let (p, d) = (ratio[(m, t)], kl[(m, t)]);
                let big_a = step.token_advantage[(m, t)];
                prm.add(p * big_a - beta * d);
                grpo.add(p * a[m] - beta * d);
                scale.add((p * a[m]).abs() + (p * big_a).abs() + beta * d.abs());
            }
            per_node.observe(prm.total(), rhs, scale.total());
            per_node.observe(grpo.total(), rhs, scale.total());
        }
    }

    // Partition form vs token sums.
    let grpo_tok = objective_grpo(group, &a, config)?;
    let prm_tok = crate::loss::objective_prm(group, &step, config)?;
    let lam_tok = objective_lambda(group, &tree, &asg, &a, config)?;
    let mut grpo_part = Neumaier::new();
    let mut prm_part = Neumaier::new();
    let mut lam_part = Neumaier::new();
    let mut scale = Neumaier::new();
    let mut lam_scale = Neumaier::new();
    for t in 0..tree.max_len() {
        for id in tree.partition_at(t)? {
            let node = tree.node(id);
            let node_adv = node_advantage(node, group, &stats);
            for &m in &node.members {
                let (p, d) = (ratio[(m, t)], kl[(m, t)]);
                grpo_part.add(p * a[m] - beta * d);
                prm_part.add(p * step.token_advantage[(m, t)] - beta * d);
                scale.add((p * a[m]).abs() + beta * d.abs());
            }
            let rep = node.members[0];
            let (p, d) = (ratio[(rep, t)], kl[(rep, t)]);
            lam_part.add(p * node_adv - beta * d);
            lam_scale.add((p * node_adv).abs() + beta * d.abs());
        }
    }
    let mut partition = CheckResult::new("partition_form", tol);
    partition.observe(grpo_tok.value, grpo_part.total() / n, scale.total() / n);
    partition.observe(prm_tok.value, prm_part.total() / n, scale.total() / n);

    let mut grouped_lambda = CheckResult::new("lambda_grouped_form", tol);
    let lam_token_scale: f64 = lam_tok.per_token_terms.iter().map(|(_, v)| v.abs()).sum();
    grouped_lambda.observe(
        lam_tok.value,
        lam_part.total() / n,
        lam_scale.total().max(lam_token_scale) / n,
    );

    let mut scaling = CheckResult::new("lambda_scaling", tol);
    for ((i, t), &g_term) in grpo_tok.per_token_terms.iter() {
        let size = tree.node(asg.owner(i, t)).size() as f64;
        let scale = (ratio[(i, t)] * a[i]).abs() + beta * kl[(i, t)].abs();
        scaling.observe(g_term, size * lam_tok.per_token_terms[(i, t)], scale);
    }

    Ok(vec![per_node, partition, grouped_lambda, scaling])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: Option<u64>,
    pub group_index: u64,
    pub check: String,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub count: u64,
    pub max_abs_gap: f64,
    pub max_rel_gap: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub groups_checked: u64,
    /// Worst gaps over all checks.
    pub max_abs_gap: f64,
    pub max_rel_gap: f64,
    pub failures: Vec<Failure>,
    pub trivial_count: u64,
    pub checks: BTreeMap<String, GapSummary>,
}

impl VerificationReport {
    pub fn record(&mut self, seed: Option<u64>, group_index: u64, trivial: bool, results: &[CheckResult]) {
        self.groups_checked += 1;
        self.trivial_count += u64::from(trivial);
        for r in results {
            self.max_abs_gap = self.max_abs_gap.max(r.abs_gap);
            self.max_rel_gap = self.max_rel_gap.max(r.rel_gap);
            let entry = self.checks.entry(r.check.clone()).or_insert(GapSummary {
                tol: r.tol,
                ..GapSummary::default()
            });
            entry.count += 1;
            entry.max_abs_gap = entry.max_abs_gap.max(r.abs_gap);
            entry.max_rel_gap = entry.max_rel_gap.max(r.rel_gap);
            if !r.passed() {
                self.failures.push(Failure {
                    seed,
                    group_index,
                    check: r.check.clone(),
                    gap: r.rel_gap,
                });
            }
        }
    }

    /// Associative, order-independent merge.
    pub fn merge(&mut self, other: &VerificationReport) {
        self.groups_checked += other.groups_checked;
        self.trivial_count += other.trivial_count;
        self.max_abs_gap = self.max_abs_gap.max(other.max_abs_gap);
        self.max_rel_gap = self.max_rel_gap.max(other.max_rel_gap);
        for (name, g) in &other.checks {
            let e = self.checks.entry(name.clone()).or_insert(GapSummary {
                tol: g.tol,
                ..GapSummary::default()
            });
            e.count += g.count;
            e.max_abs_gap = e.max_abs_gap.max(g.max_abs_gap);
            e.max_rel_gap = e.max_rel_gap.max(g.max_rel_gap);
        }
        self.failures.extend(other.failures.iter().cloned());
        self.failures.sort_by(|a, b| {
            (a.seed, a.group_index, &a.check)
                .cmp(&(b.seed, b.group_index, &b.check))
                .then(a.gap.total_cmp(&b.gap))
        });
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the theorem and identity checks on one group under one configuration.
pub fn check_group(group: &Group, config: &ObjectiveConfig, settings: &VerifySettings) -> Result<Vec<CheckResult>> {
    let mut out = vec![verify_theorem1(
        group,
        config,
        settings.std_mode,
        settings.epsilon,
        settings.theorem_tol,
    )?];
    out.extend(verify_proof_identities(
        group,
        config,
        settings.std_mode,
        settings.epsilon,
        settings.identity_tol,
    )?);
    Ok(out)
}

/// Generates `count` groups and checks each under every configuration.
pub fn run_random_suite(
    params: &GenParams,
    count: u64,
    configs: &[ObjectiveConfig],
    settings: &VerifySettings,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    for index in 0..count {
        let group = generate_random_group(params, index)?;
        let trivial = ProcessTree::build(&group).is_trivial();
        let mut results = Vec::new();
        for config in configs {
            for mut r in check_group(&group, config, settings)? {
                r.check = format!(
                    "{}[beta={},ratio={}]",
                    r.check,
                    config.beta,
                    if config.assume_unit_ratio { "unit" } else { "logp" }
                );
                results.push(r);
            }
        }
        report.record(Some(params.seed), index, trivial, &results);
    }
    Ok(report)
}
