//! Supervised next-token training on (prefix, continuation) examples.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, CausalLm};
use crate::par::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Continuation {
    pub prefix: Vec<u32>,
    pub targets: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean per-token cross-entropy over all examples before training.
    pub initial_loss: f64,
    /// Running mean per-token cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-token cross-entropy over all examples after training.
    pub final_loss: f64,
    pub skipped: usize,
}

fn mean_nll<M: CausalLm>(model: &M, examples: &[Continuation]) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for ex in examples {
        let lp = nn::continuation_token_logprobs(model, &ex.prefix, &ex.targets)?;
        total -= lp.iter().sum::<f64>();
        count += lp.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Minimizes token-mean cross-entropy on the continuation tokens with Adam.
pub fn fit_continuations<M: CausalLm>(model: &M, examples: &[Continuation], config: &FitConfig) -> Result<FitReport> {
    if examples.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    if config.batch_size == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::Config("batch size must be positive and learning rate non-negative".into()));
    }
    let initial_loss = mean_nll(model, examples)?;
    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = seeded_rng(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_total, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut terms = Vec::with_capacity(batch.len());
            let mut n_tokens = 0;
            for &i in batch {
                let ex = &examples[i];
                terms.push(nn::continuation_logprobs(model, &ex.prefix, &ex.targets)?.sum_all()?);
                n_tokens += ex.targets.len();
            }
            let total_logp = Tensor::stack(&terms, 0)?.sum_all()?;
            let loss = (total_logp.neg()? / n_tokens as f64)?;
            epoch_total += loss.to_scalar::<f64>()? * n_tokens as f64;
            epoch_count += n_tokens;
            opt.backward_step(&loss)?;
        }
        epoch_losses.push(epoch_total / epoch_count as f64);
    }
    Ok(FitReport {
        initial_loss,
        final_loss: mean_nll(model, examples)?,
        epoch_losses,
        skipped: 0,
    })
}
