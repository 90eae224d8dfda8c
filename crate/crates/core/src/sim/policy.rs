use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::gradient::GradientTable;

pub const DEFAULT_CONTEXT_ORDER: usize = 4;
pub const MAX_HORIZON: usize = 12;

/// Tabular softmax policy over a small vocabulary. Contexts without an
/// entry have all-zero logits (uniform).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab_size: u32,
    horizon: usize,
    context_order: usize,
    temperature: f64,
    logits: BTreeMap<Vec<u32>, Vec<f64>>,
}

impl ToyPolicy {
    pub fn new(vocab_size: u32, horizon: usize, temperature: f64) -> Result<Self> {
        if !(2..=16).contains(&vocab_size) {
            return Err(Error::Config(format!("vocab_size must be in 2..=16, got {vocab_size}")));
        }
        if horizon == 0 || horizon > MAX_HORIZON {
            return Err(Error::Config(format!("horizon must be in 1..={MAX_HORIZON}, got {horizon}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(Self {
            vocab_size,
            horizon,
            context_order: DEFAULT_CONTEXT_ORDER,
            temperature,
            logits: BTreeMap::new(),
        })
    }

    pub fn with_context_order(mut self, order: usize) -> Self {
        self.context_order = order;
        self
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn table(&self) -> &BTreeMap<Vec<u32>, Vec<f64>> {
        &self.logits
    }

    /// Trailing tokens of `prefix` that select the logit row.
    pub fn context<'a>(&self, prefix: &'a [u32]) -> &'a [u32] {
        &prefix[prefix.len().saturating_sub(self.context_order)..]
    }

    pub fn logits(&self, context: &[u32]) -> Vec<f64> {
        self.logits
            .get(context)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.vocab_size as usize])
    }

    pub fn set_logits(&mut self, context: &[u32], values: Vec<f64>) -> Result<()> {
        if values.len() != self.vocab_size as usize || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "context {context:?}: need {} finite logits",
                self.vocab_size
            )));
        }
        if context.len() > self.context_order {
            return Err(Error::Config(format!(
                "context {context:?} is longer than the context order {}",
                self.context_order
            )));
        }
        self.logits.insert(context.to_vec(), values);
        Ok(())
    }

    pub fn log_probs(&self, context: &[u32]) -> Vec<f64> {
        log_softmax(&self.logits(context), self.temperature)
    }

    pub fn probs(&self, context: &[u32]) -> Vec<f64> {
        self.log_probs(context).into_iter().map(f64::exp).collect()
    }

    /// `log π(token | prefix)`.
    pub fn log_prob(&self, prefix: &[u32], token: u32) -> f64 {
        self.log_probs(self.context(prefix))[token as usize]
    }

    pub fn sequence_log_prob(&self, seq: &[u32]) -> f64 {
        (0..seq.len()).map(|t| self.log_prob(&seq[..t], seq[t])).sum()
    }

    pub fn sample(&self, prefix: &[u32], rng: &mut impl Rng) -> (u32, f64) {
        let lps = self.log_probs(self.context(prefix));
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (tok, &lp) in lps.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return (tok as u32, lp);
            }
        }
        let last = lps.len() - 1;
        (last as u32, lps[last])
    }

    /// Gradient ascent step `θ ← θ + lr·grad`.
    pub fn apply(&mut self, grad: &GradientTable, learn_rate: f64) {
        for (ctx, g) in grad {
            let row = self
                .logits
                .entry(ctx.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (l, d) in row.iter_mut().zip(g) {
                *l += learn_rate * d;
            }
        }
    }
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.into_iter().map(|v| (v - lse).min(0.0)).collect()
}
