//! Tree diagnostics: path depth, intermediate proportion and triviality, and
//! a mergeable summary over streams of groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tree::ProcessTree;
use crate::types::Group;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub query_id: String,
    pub step: Option<u64>,
    /// Intermediate nodes strictly between the root and `{g_i}`.
    pub path_depth: Vec<usize>,
    /// Fraction of `g_i`'s tokens owned by non-terminal process sets.
    pub intermediate_proportion: Vec<f64>,
    /// Tokens in the terminal span of `g_i`.
    pub n_term: Vec<usize>,
    pub trivial: bool,
    /// Zero-length trajectories (their proportion is reported as 0).
    pub empty_trajectories: usize,
}

impl GroupMetrics {
    pub fn mean_depth(&self) -> f64 {
        mean(self.path_depth.iter().map(|&d| d as f64))
    }

    pub fn max_depth(&self) -> usize {
        self.path_depth.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_proportion(&self) -> f64 {
        mean(self.intermediate_proportion.iter().copied())
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        crate::sum::sum(xs) / n as f64
    }
}

pub fn group_metrics(tree: &ProcessTree, group: &Group) -> GroupMetrics {
    let k = tree.k();
    let mut path_depth = Vec::with_capacity(k);
    let mut intermediate_proportion = Vec::with_capacity(k);
    let mut n_term = Vec::with_capacity(k);
    let mut empty = 0;
    for i in 0..k {
        path_depth.push(tree.path(i).len().saturating_sub(2));
        let leaf = tree.leaf_of(i);
        let len = tree.trajectory_len(i);
        n_term.push(leaf.span_len());
        if len == 0 {
            empty += 1;
            intermediate_proportion.push(0.0);
        } else {
            intermediate_proportion.push((len - leaf.span_len()) as f64 / len as f64);
        }
    }
    GroupMetrics {
        query_id: group.query_id().to_string(),
        step: group.step(),
        path_depth,
        intermediate_proportion,
        n_term,
        trivial: tree.is_trivial(),
        empty_trajectories: empty,
    }
}

/// Σ of values in [0, 1] as a 2^-64 fixed-point integer, so partial sums
/// merge exactly in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixedSum(u128);

const FIXED_ONE: f64 = 18_446_744_073_709_551_616.0; // 2^64

impl FixedSum {
    pub fn add(&mut self, x: f64) {
        self.0 += (x.clamp(0.0, 1.0) * FIXED_ONE).round() as u128;
    }

    pub fn merge(&mut self, other: FixedSum) {
        self.0 += other.0;
    }

    pub fn value(&self) -> f64 {
        self.0 as f64 / FIXED_ONE
    }
}

/// Number of equal-width bins of the proportion sketch; quantiles are bin
/// midpoints, so their error is at most half a bin (5e-4).
pub const PROPORTION_BINS: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub groups: u64,
    pub trivial_groups: u64,
    pub trajectories: u64,
    pub depth_sum: u64,
    pub proportion_sum: FixedSum,
}

impl StepStats {
    fn add(&mut self, m: &GroupMetrics) {
        self.groups += 1;
        self.trivial_groups += u64::from(m.trivial);
        self.trajectories += m.path_depth.len() as u64;
        self.depth_sum += m.path_depth.iter().map(|&d| d as u64).sum::<u64>();
        for &p in &m.intermediate_proportion {
            self.proportion_sum.add(p);
        }
    }

    fn merge(&mut self, o: &StepStats) {
        self.groups += o.groups;
        self.trivial_groups += o.trivial_groups;
        self.trajectories += o.trajectories;
        self.depth_sum += o.depth_sum;
        self.proportion_sum.merge(o.proportion_sum);
    }
}

/// Mergeable aggregate over a stream of [`GroupMetrics`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub totals: StepStats,
    pub empty_trajectories: u64,
    /// Exact histogram of path depths.
    pub depth_hist: BTreeMap<u64, u64>,
    /// Sparse histogram of proportions over [`PROPORTION_BINS`] bins.
    pub proportion_hist: BTreeMap<u16, u64>,
    /// Per training step, for groups that carry a step id.
    pub steps: BTreeMap<u64, StepStats>,
}

impl Summary {
    pub fn add(&mut self, m: &GroupMetrics) {
        self.totals.add(m);
        self.empty_trajectories += m.empty_trajectories as u64;
        for &d in &m.path_depth {
            *self.depth_hist.entry(d as u64).or_default() += 1;
        }
        for &p in &m.intermediate_proportion {
            let bin = ((p * PROPORTION_BINS as f64) as usize).min(PROPORTION_BINS - 1);
            *self.proportion_hist.entry(bin as u16).or_default() += 1;
        }
        if let Some(step) = m.step {
            self.steps.entry(step).or_default().add(m);
        }
    }

    pub fn merge(&mut self, other: &Summary) {
        self.totals.merge(&other.totals);
        self.empty_trajectories += other.empty_trajectories;
        for (&d, &c) in &other.depth_hist {
            *self.depth_hist.entry(d).or_default() += c;
        }
        for (&b, &c) in &other.proportion_hist {
            *self.proportion_hist.entry(b).or_default() += c;
        }
        for (&s, st) in &other.steps {
            self.steps.entry(s).or_default().merge(st);
        }
    }

    pub fn view(&self) -> SummaryView {
        let t = &self.totals;
        let depth_q = |q| quantile(&self.depth_hist, t.trajectories, q).map(|d| d as f64);
        let prop_q = |q| {
            quantile(&self.proportion_hist, t.trajectories, q)
                .map(|b| (f64::from(b) + 0.5) / PROPORTION_BINS as f64)
        };
        SummaryView {
            groups: t.groups,
            trivial_groups: t.trivial_groups,
            trivial_fraction: ratio(t.trivial_groups as f64, t.groups),
            trajectories: t.trajectories,
            empty_trajectories: self.empty_trajectories,
            mean_depth: ratio(t.depth_sum as f64, t.trajectories),
            depth_p50: depth_q(0.5),
            depth_p90: depth_q(0.9),
            max_depth: self.depth_hist.keys().next_back().copied(),
            mean_proportion: ratio(t.proportion_sum.value(), t.trajectories),
            proportion_p50: prop_q(0.5),
            proportion_p90: prop_q(0.9),
            series: self
                .steps
                .iter()
                .map(|(&step, s)| StepView {
                    step,
                    groups: s.groups,
                    trivial_fraction: ratio(s.trivial_groups as f64, s.groups),
                    mean_depth: ratio(s.depth_sum as f64, s.trajectories),
                    mean_proportion: ratio(s.proportion_sum.value(), s.trajectories),
                })
                .collect(),
        }
    }
}

pub fn aggregate_metrics<'a>(stream: impl IntoIterator<Item = &'a GroupMetrics>) -> Summary {
    let mut s = Summary::default();
    for m in stream {
        s.add(m);
    }
    s
}

fn ratio(num: f64, den: u64) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

/// Nearest-rank quantile over a count histogram.
fn quantile<K: Copy>(hist: &BTreeMap<K, u64>, n: u64, q: f64) -> Option<K> {
    if n == 0 {
        return None;
    }
    let rank = ((q * n as f64).ceil() as u64).clamp(1, n);
    let mut seen = 0;
    for (&key, &count) in hist {
        seen += count;
        if seen >= rank {
            return Some(key);
        }
    }
    None
}

/// Human-facing summary; undefined statistics are `None` (JSON null).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryView {
    pub groups: u64,
    pub trivial_groups: u64,
    pub trivial_fraction: Option<f64>,
    pub trajectories: u64,
    pub empty_trajectories: u64,
    pub mean_depth: Option<f64>,
    pub depth_p50: Option<f64>,
    pub depth_p90: Option<f64>,
    pub max_depth: Option<u64>,
    pub mean_proportion: Option<f64>,
    pub proportion_p50: Option<f64>,
    pub proportion_p90: Option<f64>,
    pub series: Vec<StepView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub step: u64,
    pub groups: u64,
    pub trivial_fraction: Option<f64>,
    pub mean_depth: Option<f64>,
    pub mean_proportion: Option<f64>,
}
