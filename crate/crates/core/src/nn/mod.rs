//! Autoregressive language-model backbones and their parameter storage.
//!
//! Every model maps a token sequence to next-token logits at each position.
//! Parameters are `f64` candle variables so that training, gradient checks
//! and log-probability bookkeeping all run at double precision.

mod bigram;
mod checkpoint;
mod params;
mod transformer;

pub use bigram::BigramLm;
pub use checkpoint::{CheckpointMeta, CHECKPOINT_FORMAT};
pub use params::{Init, Params, Source};
pub use transformer::{TransformerConfig, TransformerLm};

use candle_core::{DType, Device, Tensor, D};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

pub trait CausalLm: Send + Sync + Sized {
    /// Checkpoint `kind` tag.
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone;

    fn config(&self) -> &Self::Config;
    fn vocab_size(&self) -> usize;
    fn context_window(&self) -> usize;

    /// Next-token logits `[ids.len(), vocab]`: row `i` conditions on `ids[..=i]`.
    fn forward(&self, ids: &[u32]) -> Result<Tensor>;

    fn params(&self) -> &Params;

    fn from_source(config: Self::Config, src: &mut Source<'_>) -> Result<Self>;

    /// Copies all parameters into fresh storage.
    fn deep_clone(&self) -> Result<Self> {
        let tensors = self.params().tensors_copy()?;
        Self::from_source(self.config().clone(), &mut Source::Load(&tensors))
    }
}

/// Log-softmax of the final row of the logits, as plain floats.
pub fn last_logprobs<M: CausalLm>(model: &M, ids: &[u32]) -> Result<Vec<f64>> {
    let logits = model.forward(ids)?;
    let last = logits.get(ids.len() - 1)?.to_vec1::<f64>()?;
    Ok(log_softmax(&last))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Differentiable `[targets.len()]` tensor of `log p(targets[i] | prefix, targets[..i])`.
pub fn continuation_logprobs<M: CausalLm>(model: &M, prefix: &[u32], targets: &[u32]) -> Result<Tensor> {
    if prefix.is_empty() {
        return Err(Error::invalid("continuation scoring needs a non-empty prefix"));
    }
    if targets.is_empty() {
        return Ok(Tensor::zeros(0, DTYPE, &device())?);
    }
    let mut ids = Vec::with_capacity(prefix.len() + targets.len());
    ids.extend_from_slice(prefix);
    ids.extend_from_slice(&targets[..targets.len() - 1]);
    if ids.len() > model.context_window() {
        return Err(Error::ContextOverflow {
            len: ids.len() + 1,
            window: model.context_window(),
        });
    }
    let logits = model.forward(&ids)?;
    let rows = logits.narrow(0, prefix.len() - 1, targets.len())?;
    let logp = candle_nn::ops::log_softmax(&rows, D::Minus1)?;
    let index = Tensor::new(targets, &device())?.unsqueeze(1)?;
    Ok(logp.gather(&index, 1)?.squeeze(1)?)
}

/// Non-differentiable per-token log-probabilities of `targets` after `prefix`.
pub fn continuation_token_logprobs<M: CausalLm>(
    model: &M,
    prefix: &[u32],
    targets: &[u32],
) -> Result<Vec<f64>> {
    Ok(continuation_logprobs(model, prefix, targets)?.detach().to_vec1::<f64>()?)
}

/// Per-token log-probabilities of `targets` after `prefix` for sequences of
/// any length. Longer inputs are scored in windows that advance by half the
/// context, each window scoring only its new tokens.
pub fn strided_token_logprobs<M: CausalLm>(model: &M, prefix: &[u32], targets: &[u32]) -> Result<Vec<f64>> {
    let window = model.context_window();
    if prefix.len() + targets.len() <= window + 1 {
        return continuation_token_logprobs(model, prefix, targets);
    }
    if prefix.len() > window {
        return Err(Error::ContextOverflow {
            len: prefix.len(),
            window,
        });
    }
    let full: Vec<u32> = prefix.iter().chain(targets).copied().collect();
    let stride = (window / 2).max(1);
    let mut out = Vec::with_capacity(targets.len());
    let mut t0 = prefix.len();
    while t0 < full.len() {
        let t1 = (t0 + stride).min(full.len());
        let start = (t1 - 1).saturating_sub(window);
        out.extend(continuation_token_logprobs(model, &full[start..t0], &full[t0..t1])?);
        t0 = t1;
    }
    Ok(out)
}
