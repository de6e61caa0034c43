use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::par::seeded_rng;
use super::{device, CausalLm, Init, Params, Source};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BigramConfig {
    pub vocab_size: usize,
    pub context_window: usize,
}

/// Log-linear bigram model: `logits(next | prev) = W[prev] + b`.
///
/// Small enough (`V² + V` parameters) for exhaustive finite-difference checks.
#[derive(Debug, Clone)]
pub struct BigramLm {
    config: BigramConfig,
    params: Params,
    table: Var,
    bias: Var,
}

impl BigramLm {
    pub fn new(vocab_size: usize, context_window: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        Self::from_source(
            BigramConfig {
                vocab_size,
                context_window,
            },
            &mut Source::Init(&mut rng),
        )
    }
}

impl CausalLm for BigramLm {
    const KIND: &'static str = "bigram_lm";
    type Config = BigramConfig;

    fn config(&self) -> &BigramConfig {
        &self.config
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_window(&self) -> usize {
        self.config.context_window
    }

    fn forward(&self, ids: &[u32]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        let idx = Tensor::new(ids, &device())?;
        Ok(self
            .table
            .as_tensor()
            .index_select(&idx, 0)?
            .broadcast_add(self.bias.as_tensor())?)
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn from_source(config: BigramConfig, src: &mut Source<'_>) -> Result<Self> {
        let v = config.vocab_size;
        let mut params = Params::default();
        let table = params.take(src, "table", &[v, v], Init::Normal(0.5))?;
        let bias = params.take(src, "bias", &[v], Init::Normal(0.5))?;
        Ok(Self {
            config,
            params,
            table,
            bias,
        })
    }
}
