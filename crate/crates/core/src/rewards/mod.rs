//! Reward components and their weighted combination.
//!
//! Each component maps a (post, response) pair into a bounded score. The
//! composite reward is a fixed linear combination of the five components with
//! weights bound to component names.

use std::path::Path;
use std::sync::Arc;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::classifiers::{Arity, ClassifierModel, Task, TextScorer};
use crate::error::{Error, Result};
use crate::nn::{self, CausalLm, TransformerConfig, TransformerLm};
use crate::policy::{fit_continuations, load_lm, save_lm, Continuation, FitConfig, FitReport};
use crate::text::{Tokenizer, BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
    pub lambda: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            theta: 10.0,
            lambda: 0.1,
        }
    }
}

impl RewardWeights {
    pub const ZERO: Self = Self {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        theta: 0.0,
        lambda: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.theta, self.lambda];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("reward weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            alpha: self.alpha * k,
            beta: self.beta * k,
            gamma: self.gamma * k,
            theta: self.theta * k,
            lambda: self.lambda * k,
        }
    }

    /// Largest composite reward attainable with in-bound components.
    pub fn max_reward(&self) -> f64 {
        composite_reward(self, &RewardVector::ONES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub politeness: f64,
    pub refutation: f64,
    pub evidence: f64,
    pub fluency: f64,
    pub coherence: f64,
}

impl RewardVector {
    pub const ONES: Self = Self {
        politeness: 1.0,
        refutation: 1.0,
        evidence: 1.0,
        fluency: 1.0,
        coherence: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = unit(self.politeness)
            && unit(self.refutation)
            && unit(self.evidence)
            && self.fluency > 0.0
            && self.fluency <= 1.0
            && unit(self.coherence);
        if !ok {
            return Err(Error::invalid(format!("reward vector out of bounds: {self:?}")));
        }
        Ok(())
    }
}

/// `α·pol + β·ref + γ·evid + θ·flu + λ·coh`.
pub fn composite_reward(w: &RewardWeights, v: &RewardVector) -> f64 {
    w.alpha * v.politeness + w.beta * v.refutation + w.gamma * v.evidence + w.theta * v.fluency + w.lambda * v.coherence
}

/// A frozen language model that scores a standalone text.
pub trait FluencyModel: Send + Sync {
    /// Log-probability of each scored token of `text`.
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>>;

    /// Geometric mean of token probabilities, `exp(mean log p)`.
    fn fluency(&self, text: &str) -> Result<f64> {
        Ok(mean_logprob(self, text)?.exp())
    }

    /// `exp(-mean log p)`.
    fn perplexity(&self, text: &str) -> Result<f64> {
        Ok((-mean_logprob(self, text)?).exp())
    }
}

fn mean_logprob<L: FluencyModel + ?Sized>(lm: &L, text: &str) -> Result<f64> {
    let lp = scored_logprobs(lm, text)?;
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

fn scored_logprobs<L: FluencyModel + ?Sized>(lm: &L, text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Err(Error::invalid("cannot score an empty text"));
    }
    let lp = lm.token_logprobs(text)?;
    if lp.is_empty() {
        return Err(Error::invalid("text has no scoring units"));
    }
    Ok(lp)
}

pub fn perplexity(lm: &dyn FluencyModel, text: &str) -> Result<f64> {
    lm.perplexity(text)
}

/// Inverse perplexity of `text` under `lm`.
pub fn fluency_reward(lm: &dyn FluencyModel, text: &str) -> Result<f64> {
    lm.fluency(text)
}

/// Assigns every token probability `1/|V|`.
#[derive(Debug, Clone)]
pub struct UniformLm {
    pub tokenizer: Arc<Tokenizer>,
}

impl FluencyModel for UniformLm {
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        let n = self.tokenizer.encode(text)?.len();
        let lp = -(self.tokenizer.vocab_size() as f64).ln();
        Ok(vec![lp; n])
    }

    fn fluency(&self, text: &str) -> Result<f64> {
        scored_logprobs(self, text)?;
        Ok(1.0 / self.tokenizer.vocab_size() as f64)
    }

    fn perplexity(&self, text: &str) -> Result<f64> {
        scored_logprobs(self, text)?;
        Ok(self.tokenizer.vocab_size() as f64)
    }
}

/// Small causal LM trained on response text, scoring `text` after `<bos>`.
#[derive(Debug, Clone)]
pub struct ReferenceLm {
    model: TransformerLm,
    tokenizer: Arc<Tokenizer>,
    seed: u64,
}

const REFERENCE_ROLE: &str = "reference";

impl ReferenceLm {
    pub fn new(tokenizer: Arc<Tokenizer>, config: TransformerConfig, seed: u64) -> Result<Self> {
        if config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config("reference model vocabulary does not match tokenizer".into()));
        }
        Ok(Self {
            model: TransformerLm::new(config, seed)?,
            tokenizer,
            seed,
        })
    }

    pub fn model(&self) -> &TransformerLm {
        &self.model
    }

    pub fn tokenizer(&self) -> &Arc<Tokenizer> {
        &self.tokenizer
    }

    /// Fits the model to `<bos> text <eos>` for each text that fits the window.
    pub fn fit<S: AsRef<str>>(&mut self, texts: &[S], config: &FitConfig) -> Result<FitReport> {
        let window = self.model.context_window();
        let mut examples = Vec::with_capacity(texts.len());
        for text in texts {
            let mut targets = self.tokenizer.encode(text.as_ref())?;
            targets.push(EOS);
            if targets.len() <= window {
                examples.push(Continuation { prefix: vec![BOS], targets });
            }
        }
        if examples.is_empty() {
            return Err(Error::invalid("no reference texts fit the context window"));
        }
        let mut report = fit_continuations(&self.model, &examples, config)?;
        report.skipped = texts.len() - examples.len();
        Ok(report)
    }

    /// Mean-pooled input embeddings of the reference model.
    pub fn embedder(&self) -> Result<MeanPoolEmbedder> {
        MeanPoolEmbedder::new(self.tokenizer.clone(), self.model.token_embeddings())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_lm(dir, REFERENCE_ROLE, &self.model, &self.tokenizer, self.seed, serde_json::Value::Null)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (model, tokenizer, meta) = load_lm::<TransformerLm>(dir, REFERENCE_ROLE)?;
        Ok(Self {
            model,
            tokenizer: Arc::new(tokenizer),
            seed: meta.seed,
        })
    }
}

impl FluencyModel for ReferenceLm {
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        let ids = self.tokenizer.encode(text)?;
        nn::strided_token_logprobs(&self.model, &[BOS], &ids)
    }
}

/// Maps text to a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Average of per-token embedding rows.
#[derive(Debug, Clone)]
pub struct MeanPoolEmbedder {
    tokenizer: Arc<Tokenizer>,
    table: Vec<Vec<f64>>,
}

impl MeanPoolEmbedder {
    pub fn new(tokenizer: Arc<Tokenizer>, table: &Tensor) -> Result<Self> {
        let table = table.detach().to_vec2::<f64>()?;
        if table.len() != tokenizer.vocab_size() {
            return Err(Error::invalid("embedding table does not match tokenizer"));
        }
        Ok(Self { tokenizer, table })
    }

    pub fn dim(&self) -> usize {
        self.table.first().map_or(0, Vec::len)
    }
}

impl Embedder for MeanPoolEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let ids = self.tokenizer.encode(text)?;
        if ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty text"));
        }
        let mut out = vec![0.0; self.dim()];
        for &id in &ids {
            for (o, x) in out.iter_mut().zip(&self.table[id as usize]) {
                *o += x;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }
}

/// Cosine similarity clamped to `[0, 1]`. Identical vectors give exactly 1.
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("embedding dimensions differ"));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("zero-norm embedding"));
    }
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

/// Frozen scorers used to compute every reward component.
#[derive(Clone)]
pub struct RewardContext {
    pub politeness: Arc<dyn TextScorer>,
    pub refutation: Arc<dyn TextScorer>,
    pub evidence: Arc<dyn TextScorer>,
    pub fluency: Arc<dyn FluencyModel>,
    pub embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for RewardContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RewardContext { .. }")
    }
}

fn non_empty(what: &str, text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::invalid(format!("{what} text is empty")));
    }
    Ok(())
}

impl RewardContext {
    pub fn new(
        politeness: Arc<dyn TextScorer>,
        refutation: Arc<dyn TextScorer>,
        evidence: Arc<dyn TextScorer>,
        fluency: Arc<dyn FluencyModel>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self> {
        if politeness.arity() != Arity::SingleText {
            return Err(Error::Config("politeness scorer must take a single text".into()));
        }
        if refutation.arity() != Arity::TextPair || evidence.arity() != Arity::TextPair {
            return Err(Error::Config("refutation and evidence scorers must be pairwise".into()));
        }
        Ok(Self {
            politeness,
            refutation,
            evidence,
            fluency,
            embedder,
        })
    }

    pub fn politeness_reward(&self, response: &str) -> Result<f64> {
        non_empty("response", response)?;
        self.politeness.score(None, response)
    }

    pub fn refutation_reward(&self, post: &str, response: &str) -> Result<f64> {
        self.refutation.score(Some(post), response)
    }

    pub fn evidence_reward(&self, post: &str, response: &str) -> Result<f64> {
        self.evidence.score(Some(post), response)
    }

    pub fn fluency_reward(&self, response: &str) -> Result<f64> {
        fluency_reward(self.fluency.as_ref(), response)
    }

    pub fn perplexity(&self, response: &str) -> Result<f64> {
        perplexity(self.fluency.as_ref(), response)
    }

    pub fn coherence_reward(&self, post: &str, response: &str) -> Result<f64> {
        non_empty("post", post)?;
        non_empty("response", response)?;
        let a = self.embedder.embed(post)?;
        let b = self.embedder.embed(response)?;
        clamped_cosine(&a, &b)
    }

    pub fn reward_vector(&self, post: &str, response: &str) -> Result<RewardVector> {
        Ok(RewardVector {
            politeness: self.politeness_reward(response)?,
            refutation: self.refutation_reward(post, response)?,
            evidence: self.evidence_reward(post, response)?,
            fluency: self.fluency_reward(response)?,
            coherence: self.coherence_reward(post, response)?,
        })
    }

    pub fn composite(&self, weights: &RewardWeights, post: &str, response: &str) -> Result<(RewardVector, f64)> {
        let v = self.reward_vector(post, response)?;
        Ok((v, composite_reward(weights, &v)))
    }

    /// Loads a saved [`RewardBundle`].
    pub fn load(dir: &Path) -> Result<Self> {
        RewardBundle::load(dir)?.context()
    }
}

/// Concrete, saveable scorers behind a [`RewardContext`].
#[derive(Debug, Clone)]
pub struct RewardBundle {
    pub politeness: ClassifierModel,
    pub refutation: ClassifierModel,
    pub evidence: ClassifierModel,
    pub reference: ReferenceLm,
}

impl RewardBundle {
    pub fn context(&self) -> Result<RewardContext> {
        RewardContext::new(
            Arc::new(self.politeness.clone()),
            Arc::new(self.refutation.clone()),
            Arc::new(self.evidence.clone()),
            Arc::new(self.reference.clone()),
            Arc::new(self.reference.embedder()?),
        )
    }

    /// Writes `politeness/`, `refutation/`, `evidence/` and `reference/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.politeness.save(&dir.join(POLITENESS_DIR))?;
        self.refutation.save(&dir.join(REFUTATION_DIR))?;
        self.evidence.save(&dir.join(EVIDENCE_DIR))?;
        self.reference.save(&dir.join(REFERENCE_DIR))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let classifier = |name: &str, task: Task| -> Result<ClassifierModel> {
            let model = ClassifierModel::load(&dir.join(name))?;
            if model.task() != task {
                return Err(Error::Checkpoint(format!("{name}/ holds a {} classifier", model.task().name())));
            }
            Ok(model)
        };
        Ok(Self {
            politeness: classifier(POLITENESS_DIR, Task::Politeness)?,
            refutation: classifier(REFUTATION_DIR, Task::Refutation)?,
            evidence: classifier(EVIDENCE_DIR, Task::Evidence)?,
            reference: ReferenceLm::load(&dir.join(REFERENCE_DIR))?,
        })
    }
}

pub const POLITENESS_DIR: &str = "politeness";
pub const REFUTATION_DIR: &str = "refutation";
pub const EVIDENCE_DIR: &str = "evidence";
pub const REFERENCE_DIR: &str = "reference";
