//! JSONL wire formats: group dumps in, per-token weights and per-group
//! analysis rows out.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    lambda_weights, objective_grpo, objective_lambda, Objective, ObjectiveConfig,
};
use crate::metrics::{group_metrics, GroupMetrics};
use crate::step::step_advantages;
use crate::tree::ProcessTree;
use crate::types::{outcome_advantages, reward_stats, Group, StdMode, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub tokens: Vec<u32>,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_old: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
}

/// One line of a group dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub completions: Vec<CompletionRecord>,
}

impl From<&Group> for GroupRecord {
    fn from(group: &Group) -> Self {
        GroupRecord {
            query_id: group.query_id().to_string(),
            step: group.step(),
            completions: group
                .trajectories()
                .iter()
                .map(|t| CompletionRecord {
                    tokens: t.tokens.clone(),
                    reward: t.reward,
                    logp: t.logp_new.clone(),
                    logp_old: t.logp_old.clone(),
                    logp_ref: t.logp_ref.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GroupRecord> for Group {
    type Error = Error;

    fn try_from(rec: GroupRecord) -> Result<Group> {
        let trajectories = rec
            .completions
            .into_iter()
            .map(|c| Trajectory::new(c.tokens, c.reward).with_logps(c.logp, c.logp_old, c.logp_ref))
            .collect();
        Ok(Group::new(rec.query_id, trajectories)?.with_step(rec.step))
    }
}

/// Single-line JSON; floats use shortest round-trip formatting.
pub fn serialize_group(group: &Group) -> String {
    serde_json::to_string(&GroupRecord::from(group)).expect("group records always serialize")
}

pub fn parse_group_line(line: &str) -> Result<Group> {
    let rec: GroupRecord = serde_json::from_str(line)?;
    Group::try_from(rec)
}

/// Streaming reader over a JSONL group dump. Holds one line at a time.
///
/// In strict mode the first bad line is yielded as an error (and the caller
/// is expected to stop); in lenient mode bad lines are counted and skipped.
pub struct GroupReader<R> {
    reader: R,
    buf: Vec<u8>,
    line_no: usize,
    strict: bool,
    skipped: usize,
}

pub fn parse_groups<R: BufRead>(reader: R, strict: bool) -> GroupReader<R> {
    GroupReader {
        reader,
        buf: Vec::new(),
        line_no: 0,
        strict,
        skipped: 0,
    }
}

impl<R> GroupReader<R> {
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for GroupReader<R> {
    type Item = Result<(usize, Group)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line_no = self.line_no;
            let parsed = std::str::from_utf8(&self.buf)
                .map_err(|e| e.to_string())
                .and_then(|s| {
                    if s.trim().is_empty() {
                        Ok(None)
                    } else {
                        parse_group_line(s).map(Some).map_err(|e| e.to_string())
                    }
                });
            match parsed {
                Ok(None) => continue,
                Ok(Some(g)) => return Some(Ok((line_no, g))),
                Err(message) if self.strict => {
                    return Some(Err(Error::Parse { line: line_no, message }))
                }
                Err(message) => {
                    log_skip(line_no, &message);
                    self.skipped += 1;
                }
            }
        }
    }
}

fn log_skip(line: usize, message: &str) {
    eprintln!("warning: skipping line {line}: {message}");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionWeights {
    /// Outcome advantage `a_i`.
    pub advantage: f64,
    /// Step advantage `A_{i,t}` per token.
    pub token_advantage: Vec<f64>,
    /// `1 / |λ^(i,t)|` per token.
    pub lambda_weight: Vec<f64>,
}

/// Per-token training weights for one group. `value` is the objective to
/// maximize and `loss` its negation; both are absent when the group lacks
/// the log-probabilities the configuration needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub objective: Objective,
    pub value: Option<f64>,
    pub loss: Option<f64>,
    pub completions: Vec<CompletionWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSettings {
    pub std_mode: StdMode,
    pub epsilon: f64,
}

pub fn compute_weights(
    group: &Group,
    objective: Objective,
    stats_settings: StatsSettings,
    config: &ObjectiveConfig,
) -> WeightRecord {
    let stats = reward_stats(group, stats_settings.std_mode, stats_settings.epsilon);
    let a = outcome_advantages(group, &stats);
    let tree = ProcessTree::build(group);
    let asg = tree.assign_tokens();
    let step = step_advantages(&tree, &asg, group, &stats);
    let weights = lambda_weights(&tree, &asg);
    let value = match objective {
        Objective::Grpo => objective_grpo(group, &a, config),
        Objective::Lambda => objective_lambda(group, &tree, &asg, &a, config),
    }
    .ok()
    .map(|r| r.value);
    WeightRecord {
        query_id: group.query_id().to_string(),
        step: group.step(),
        objective,
        value,
        loss: value.map(|v| -v),
        completions: a
            .iter()
            .enumerate()
            .map(|(i, &adv)| CompletionWeights {
                advantage: adv,
                token_advantage: step.token_advantage.row(i).to_vec(),
                lambda_weight: weights.row(i).to_vec(),
            })
            .collect(),
    }
}

/// Metrics plus both objective values for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAnalysis {
    pub metrics: GroupMetrics,
    pub k: usize,
    pub objective_grpo: Option<f64>,
    pub objective_lambda: Option<f64>,
}

/// Objectives are `None` when `config` cannot be evaluated on the group.
pub fn analyze_group(group: &Group, stats_settings: StatsSettings, config: &ObjectiveConfig) -> GroupAnalysis {
    let stats = reward_stats(group, stats_settings.std_mode, stats_settings.epsilon);
    let a = outcome_advantages(group, &stats);
    let tree = ProcessTree::build(group);
    let asg = tree.assign_tokens();
    GroupAnalysis {
        metrics: group_metrics(&tree, group),
        k: group.k(),
        objective_grpo: objective_grpo(group, &a, config).ok().map(|r| r.value),
        objective_lambda: objective_lambda(group, &tree, &asg, &a, config).ok().map(|r| r.value),
    }
}

/// Row of the per-group analysis CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow<'a> {
    pub query_id: &'a str,
    pub step: Option<u64>,
    pub k: usize,
    pub trivial: bool,
    pub mean_depth: f64,
    pub max_depth: usize,
    pub mean_p: f64,
    pub objective_grpo: Option<f64>,
    pub objective_lambda: Option<f64>,
}

impl GroupAnalysis {
    pub fn row(&self) -> AnalysisRow<'_> {
        AnalysisRow {
            query_id: &self.metrics.query_id,
            step: self.metrics.step,
            k: self.k,
            trivial: self.metrics.trivial,
            mean_depth: self.metrics.mean_depth(),
            max_depth: self.metrics.max_depth(),
            mean_p: self.metrics.mean_proportion(),
            objective_grpo: self.objective_grpo,
            objective_lambda: self.objective_lambda,
        }
    }
}
