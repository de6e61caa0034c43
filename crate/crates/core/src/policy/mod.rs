//! The generator policy: a causal language model conditioned on the post.
//!
//! Sequences are laid out as `<bos> post <sep> response <eos>`. Only the
//! response tokens and the closing `<eos>` are ever scored or trained on.

mod sampling;
mod train;

pub use sampling::{nucleus_sample, nucleus_set, validate_distribution};
pub use train::{fit_continuations, Continuation, FitConfig, FitReport};

use std::path::Path;
use std::sync::Arc;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedPair, CHAR_LIMIT};
use crate::error::{Error, Result};
use crate::nn::{self, CausalLm, CheckpointMeta, Source, TransformerConfig, TransformerLm};
use crate::par::seeded_rng;
use crate::text::{Tokenizer, BOS, EOS, SEP};

/// Resampling attempts after an immediate end-of-sequence.
pub const MAX_RESAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub char_limit: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            max_new_tokens: 64,
            char_limit: CHAR_LIMIT,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    /// Nucleus small enough that only the argmax survives.
    pub fn greedy() -> Self {
        Self {
            top_p: 1e-12,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} is outside (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.char_limit == 0 || self.char_limit > CHAR_LIMIT {
            return Err(Error::Config(format!("char_limit must be in 1..={CHAR_LIMIT}")));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxTokens,
    CharLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Sampled ids, including the final `<eos>` when `stopped_by == Eos`.
    pub token_ids: Vec<u32>,
    /// `log p` of each sampled id under the (untempered) policy.
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub stopped_by: StopReason,
}

#[derive(Debug, Clone)]
pub struct PolicyModel<M: CausalLm = TransformerLm> {
    model: M,
    tokenizer: Arc<Tokenizer>,
    seed: u64,
}

const POLICY_ROLE: &str = "policy";

impl PolicyModel<TransformerLm> {
    /// A randomly initialized transformer policy over `tokenizer`.
    pub fn transformer(tokenizer: Arc<Tokenizer>, config: TransformerConfig, seed: u64) -> Result<Self> {
        if config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config("transformer vocab size differs from tokenizer".into()));
        }
        Self::new(TransformerLm::new(config, seed)?, tokenizer, seed)
    }
}

impl<M: CausalLm> PolicyModel<M> {
    pub fn new(model: M, tokenizer: Arc<Tokenizer>, seed: u64) -> Result<Self> {
        if model.vocab_size() != tokenizer.vocab_size() {
            return Err(Error::Config(format!(
                "model vocabulary {} differs from tokenizer vocabulary {}",
                model.vocab_size(),
                tokenizer.vocab_size()
            )));
        }
        Ok(Self { model, tokenizer, seed })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn tokenizer(&self) -> &Arc<Tokenizer> {
        &self.tokenizer
    }

    pub fn context_window(&self) -> usize {
        self.model.context_window()
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self {
            model: self.model.deep_clone()?,
            tokenizer: self.tokenizer.clone(),
            seed: self.seed,
        })
    }

    /// `<bos> post <sep>`, leaving room for at least one response token.
    pub fn prompt_ids(&self, post: &str) -> Result<Vec<u32>> {
        if post.is_empty() {
            return Err(Error::invalid("post text is empty"));
        }
        let mut ids = vec![BOS];
        ids.extend(self.tokenizer.encode(post)?);
        ids.push(SEP);
        if ids.len() + 1 > self.context_window() {
            return Err(Error::ContextOverflow {
                len: ids.len() + 1,
                window: self.context_window(),
            });
        }
        Ok(ids)
    }

    /// Response ids followed by `<eos>`.
    pub fn target_ids(&self, response: &str) -> Result<Vec<u32>> {
        let mut ids = self.tokenizer.encode(response)?;
        ids.push(EOS);
        Ok(ids)
    }

    pub fn generate(&self, post: &str, config: &GenerationConfig) -> Result<GenerationResult> {
        config.validate()?;
        let prompt = self.prompt_ids(post)?;
        let mut rng = seeded_rng(config.seed);
        for _ in 0..=MAX_RESAMPLES {
            let result = self.sample_once(&prompt, config, &mut rng)?;
            if !result.text.is_empty() {
                return Ok(result);
            }
        }
        Err(Error::EmptyGeneration {
            attempts: MAX_RESAMPLES + 1,
        })
    }

    fn sample_once(
        &self,
        prompt: &[u32],
        config: &GenerationConfig,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<GenerationResult> {
        let mut ids = prompt.to_vec();
        let (mut token_ids, mut token_logprobs) = (Vec::new(), Vec::new());
        let mut chars = 0usize;
        let stopped_by = loop {
            if token_ids.len() >= config.max_new_tokens || ids.len() >= self.context_window() {
                break StopReason::MaxTokens;
            }
            let logp = nn::last_logprobs(&self.model, &ids)?;
            let dist = sampling_distribution(&logp, config.temperature);
            let token = nucleus_sample(&dist, config.top_p, rng)? as u32;
            if token == EOS {
                token_ids.push(token);
                token_logprobs.push(logp[token as usize]);
                break StopReason::Eos;
            }
            let width = self.tokenizer.piece_chars(token);
            if chars + width > config.char_limit {
                break StopReason::CharLimit;
            }
            chars += width;
            ids.push(token);
            token_ids.push(token);
            token_logprobs.push(logp[token as usize]);
        };
        Ok(GenerationResult {
            text: self.tokenizer.decode(&token_ids),
            total_logprob: token_logprobs.iter().sum(),
            token_ids,
            token_logprobs,
            stopped_by,
        })
    }

    /// Per-token `log p` of `ids` following the prompt for `post`.
    pub fn token_logprobs(&self, post: &str, ids: &[u32]) -> Result<Vec<f64>> {
        let prompt = self.prompt_ids(post)?;
        nn::continuation_token_logprobs(&self.model, &prompt, ids)
    }

    /// Chain-rule `log p(response <eos> | post)`.
    pub fn sequence_logprob(&self, post: &str, response: &str) -> Result<f64> {
        let targets = self.target_ids(response)?;
        Ok(self.token_logprobs(post, &targets)?.iter().sum())
    }

    /// Differentiable `log p(ids | post)` as a scalar tensor.
    pub fn logprob_tensor(&self, prompt: &[u32], ids: &[u32]) -> Result<Tensor> {
        Ok(nn::continuation_logprobs(&self.model, prompt, ids)?.sum_all()?)
    }

    /// Supervised warm start on pairs: cross-entropy on response tokens only.
    pub fn warm_start(&mut self, pairs: &[AnnotatedPair], config: &FitConfig) -> Result<FitReport> {
        if pairs.is_empty() {
            return Err(Error::invalid("warm start needs at least one pair"));
        }
        let mut examples = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let prompt = match self.prompt_ids(&pair.post.text) {
                Ok(p) => p,
                Err(Error::ContextOverflow { .. }) => {
                    log::warn!("skipping pair {i}: post does not fit the context window");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let targets = self.target_ids(&pair.response.text)?;
            if prompt.len() + targets.len() - 1 > self.context_window() {
                log::warn!("skipping pair {i}: pair does not fit the context window");
                continue;
            }
            examples.push(Continuation { prefix: prompt, targets });
        }
        if examples.is_empty() {
            return Err(Error::invalid("every pair exceeds the context window"));
        }
        let mut report = fit_continuations(&self.model, &examples, config)?;
        report.skipped = pairs.len() - examples.len();
        Ok(report)
    }

    pub fn save(&self, dir: &Path, provenance: serde_json::Value) -> Result<()> {
        save_lm(dir, POLICY_ROLE, &self.model, &self.tokenizer, self.seed, provenance)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (model, tokenizer, meta) = load_lm::<M>(dir, POLICY_ROLE)?;
        Self::new(model, Arc::new(tokenizer), meta.seed)
    }
}

/// Tempered next-token distribution with `<bos>` and `<sep>` excluded.
fn sampling_distribution(logp: &[f64], temperature: f64) -> Vec<f64> {
    let mut scaled: Vec<f64> = logp.iter().map(|l| l / temperature).collect();
    scaled[BOS as usize] = f64::NEG_INFINITY;
    scaled[SEP as usize] = f64::NEG_INFINITY;
    nn::log_softmax(&scaled).into_iter().map(f64::exp).collect()
}

pub(crate) fn save_lm<M: CausalLm>(
    dir: &Path,
    role: &str,
    model: &M,
    tokenizer: &Tokenizer,
    seed: u64,
    provenance: serde_json::Value,
) -> Result<()> {
    let mut meta = CheckpointMeta::new(&format!("{role}/{}", M::KIND), tokenizer, seed, model.config())?;
    meta.provenance = provenance;
    meta.save(dir, tokenizer, model.params())
}

pub(crate) fn load_lm<M: CausalLm>(dir: &Path, role: &str) -> Result<(M, Tokenizer, CheckpointMeta)> {
    let (meta, tokenizer, tensors) = CheckpointMeta::load(dir, &format!("{role}/{}", M::KIND))?;
    let config: M::Config = serde_json::from_value(meta.config.clone())?;
    let model = M::from_source(config, &mut Source::Load(&tensors))?;
    if model.vocab_size() != tokenizer.vocab_size() {
        return Err(Error::Checkpoint("model and tokenizer vocabularies differ".into()));
    }
    Ok((model, tokenizer, meta))
}

#[cfg(test)]
mod tests;
