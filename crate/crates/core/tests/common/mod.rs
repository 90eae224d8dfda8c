//! Reference implementations written directly from the definitions, sharing
//! no code with the library.

#![allow(dead_code)]

use std::collections::BTreeSet;

pub type Seqs = Vec<Vec<u32>>;

pub fn example() -> (Seqs, Vec<f64>) {
    (
        vec![
            vec![5, 5, 5, 1, 1, 1],
            vec![5, 5, 5, 2, 2],
            vec![7, 7, 7, 7, 3, 3],
            vec![7, 7, 7, 7, 4, 4, 8],
            vec![7, 7, 7, 7, 4, 4, 9, 9],
            vec![6, 6],
        ],
        vec![0.5, 0.5, 1.0, 0.0, 0.0, 0.5],
    )
}

/// Mean and sample std, summed in plain order.
pub fn mean_std(r: &[f64]) -> (f64, f64) {
    let k = r.len() as f64;
    let mean = r.iter().sum::<f64>() / k;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

pub fn advantages(r: &[f64]) -> Vec<f64> {
    let (m, s) = mean_std(r);
    if s < 1e-8 {
        return vec![0.0; r.len()];
    }
    r.iter().map(|x| (x - m) / s).collect()
}

/// Trajectories that agree with `i` on tokens `0..=t`.
pub fn owner_set(seqs: &Seqs, i: usize, t: usize) -> BTreeSet<usize> {
    let p = &seqs[i][..=t];
    (0..seqs.len())
        .filter(|&j| seqs[j].len() > t && &seqs[j][..=t] == p)
        .collect()
}

/// Every distinct owner set with the positions it covers.
pub fn process_sets(seqs: &Seqs) -> Vec<(BTreeSet<usize>, BTreeSet<usize>)> {
    let mut out: Vec<(BTreeSet<usize>, BTreeSet<usize>)> = Vec::new();
    for i in 0..seqs.len() {
        for t in 0..seqs[i].len() {
            let set = owner_set(seqs, i, t);
            match out.iter_mut().find(|(s, _)| *s == set) {
                Some((_, ts)) => {
                    ts.insert(t);
                }
                None => out.push((set, BTreeSet::from([t]))),
            }
        }
    }
    out
}

pub fn n_tokens(seqs: &Seqs) -> f64 {
    seqs.iter().map(Vec::len).sum::<usize>() as f64
}

/// Σ_i Σ_t a_i / N, token by token.
pub fn grpo_token_sum(seqs: &Seqs, r: &[f64]) -> f64 {
    let a = advantages(r);
    let mut total = 0.0;
    for (i, s) in seqs.iter().enumerate() {
        for _ in s {
            total += a[i];
        }
    }
    total / n_tokens(seqs)
}

/// Σ over process sets of |λ|·span·Â(λ) / N.
pub fn prm_node_sum(seqs: &Seqs, r: &[f64]) -> f64 {
    let (m, s) = mean_std(r);
    let total: f64 = process_sets(seqs)
        .iter()
        .map(|(set, ts)| {
            let step = set.iter().map(|&j| r[j]).sum::<f64>() / set.len() as f64;
            set.len() as f64 * ts.len() as f64 * (step - m) / s
        })
        .sum();
    total / n_tokens(seqs)
}

/// Σ_i Σ_t a_i / |λ^(i,t)| / N.
pub fn lambda_token_sum(seqs: &Seqs, r: &[f64]) -> f64 {
    let a = advantages(r);
    let mut total = 0.0;
    for (i, s) in seqs.iter().enumerate() {
        for t in 0..s.len() {
            total += a[i] / owner_set(seqs, i, t).len() as f64;
        }
    }
    total / n_tokens(seqs)
}

/// Σ over process sets of span · Σ_{j∈λ} a_j / |λ| / N.
pub fn lambda_node_sum(seqs: &Seqs, r: &[f64]) -> f64 {
    let a = advantages(r);
    let total: f64 = process_sets(seqs)
        .iter()
        .map(|(set, ts)| ts.len() as f64 * set.iter().map(|&j| a[j]).sum::<f64>() / set.len() as f64)
        .sum();
    total / n_tokens(seqs)
}

// Frozen from the oracles above; see tests/oracles.rs.
pub const EXAMPLE_ADVANTAGES: [f64; 6] = [
    0.221_403_721_385_023_76,
    0.221_403_721_385_023_76,
    1.549_826_049_695_166_6,
    -1.107_018_606_925_119,
    -1.107_018_606_925_119,
    0.221_403_721_385_023_76,
];
pub const EXAMPLE_GRPO: f64 = -0.130_237_483_167_661_12;
pub const EXAMPLE_LAMBDA: f64 = -0.032_559_370_791_915_38;
pub const EXAMPLE_SHARED_ADVANTAGE: f64 = -0.221_403_721_385_023_93;
