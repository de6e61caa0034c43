//! Candidate generation and draft scoring behind the HTTP service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierModel, Task, TextScorer, THRESHOLD};
use crate::corpus::CHAR_LIMIT;
use crate::error::{Error, Result};
use crate::nn::{CausalLm, CheckpointMeta};
use crate::par::{derive_seed, Execution};
use crate::policy::{GenerationConfig, PolicyModel};
use crate::rewards::{composite_reward, RewardContext, RewardVector, RewardWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub text: String,
    #[serde(rename = "scores")]
    pub reward_vector: RewardVector,
    pub composite: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Policy checkpoint directory.
    pub checkpoint: PathBuf,
    /// Directory with `politeness/`, `refutation/`, `evidence/` and `reference/`.
    pub rewards: PathBuf,
    /// Misinformation classifier used by the optional request gate.
    pub misinfo_checkpoint: Option<PathBuf>,
    pub misinfo_gate: bool,
    pub bind: String,
    pub generation: GenerationConfig,
    pub max_candidates: usize,
    pub weights: RewardWeights,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("artifacts/policy"),
            rewards: PathBuf::from("artifacts/rewards"),
            misinfo_checkpoint: None,
            misinfo_gate: false,
            bind: "127.0.0.1:8080".into(),
            generation: GenerationConfig::default(),
            max_candidates: 5,
            weights: RewardWeights::default(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_candidates == 0 {
            return Err(Error::Config("max_candidates must be at least 1".into()));
        }
        if self.misinfo_gate && self.misinfo_checkpoint.is_none() {
            return Err(Error::Config("misinfo_gate needs misinfo_checkpoint".into()));
        }
        self.weights.validate()?;
        self.generation.validate()
    }
}

fn check_text(what: &str, text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    Ok(())
}

fn rank(mut candidates: Vec<CandidateResponse>) -> Vec<CandidateResponse> {
    // stable: equal composites keep sampling order
    candidates.sort_by(|a, b| b.composite.total_cmp(&a.composite));
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    candidates
}

/// Samples `n` responses with seeds derived from `seed`, scores each and
/// returns them best first.
#[allow(clippy::too_many_arguments)]
pub fn generate_candidates<M: CausalLm>(
    policy: &PolicyModel<M>,
    ctx: &RewardContext,
    weights: &RewardWeights,
    post_text: &str,
    n: usize,
    seed: u64,
    generation: &GenerationConfig,
    max_candidates: usize,
    exec: Execution,
) -> Result<Vec<CandidateResponse>> {
    check_text("post_text", post_text)?;
    if n == 0 || n > max_candidates {
        return Err(Error::invalid(format!("n must be between 1 and {max_candidates}, got {n}")));
    }
    let slots: Vec<u64> = (0..n as u64).collect();
    let candidates = exec.try_map(&slots, |_, &k| -> Result<CandidateResponse> {
        let config = generation.with_seed(derive_seed(seed, &[k]));
        let text = policy.generate(post_text, &config)?.text;
        let v = ctx.reward_vector(post_text, &text)?;
        Ok(CandidateResponse {
            text,
            reward_vector: v,
            composite: composite_reward(weights, &v),
            rank: 0,
        })
    })?;
    Ok(rank(candidates))
}

/// Scores a human-written draft with the same five rewards.
pub fn score_draft(
    ctx: &RewardContext,
    weights: &RewardWeights,
    post_text: &str,
    draft_text: &str,
) -> Result<CandidateResponse> {
    check_text("post_text", post_text)?;
    check_text("draft_text", draft_text)?;
    let len = draft_text.chars().count();
    if len > CHAR_LIMIT {
        return Err(Error::invalid(format!("draft has {len} characters; the limit is {CHAR_LIMIT}")));
    }
    let v = ctx.reward_vector(post_text, draft_text)?;
    Ok(CandidateResponse {
        text: draft_text.to_string(),
        reward_vector: v,
        composite: composite_reward(weights, &v),
        rank: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub post_text: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub top_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub candidates: Vec<CandidateResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub post_text: String,
    pub draft_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoint_id: String,
}

/// Frozen models shared by every request.
pub struct CounterService<M: CausalLm = crate::nn::TransformerLm> {
    policy: PolicyModel<M>,
    ctx: RewardContext,
    gate: Option<ClassifierModel>,
    config: ServiceConfig,
    checkpoint_id: String,
    exec: Execution,
}

impl<M: CausalLm> CounterService<M> {
    pub fn new(
        policy: PolicyModel<M>,
        ctx: RewardContext,
        gate: Option<ClassifierModel>,
        config: ServiceConfig,
        checkpoint_id: String,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(g) = &gate {
            if g.task() != Task::Misinfo {
                return Err(Error::Config(format!("gate classifier is a {} model", g.task().name())));
            }
        }
        Ok(Self {
            policy,
            ctx,
            gate: if config.misinfo_gate { gate } else { None },
            config,
            checkpoint_id,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn gate(&self, post: &str) -> Result<()> {
        if let Some(g) = &self.gate {
            let p = g.score(None, post)?;
            if p < THRESHOLD {
                return Err(Error::Rejected(format!(
                    "post does not look like misinformation (probability {p:.3}); no counter-response generated"
                )));
            }
        }
        Ok(())
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        check_text("post_text", &req.post_text)?;
        self.gate(&req.post_text)?;
        let mut generation = self.config.generation;
        if let Some(p) = req.top_p {
            generation.top_p = p;
            generation.validate()?;
        }
        let candidates = generate_candidates(
            &self.policy,
            &self.ctx,
            &self.config.weights,
            &req.post_text,
            req.n,
            req.seed.unwrap_or(generation.seed),
            &generation,
            self.config.max_candidates,
            self.exec,
        )?;
        Ok(GenerateResponse { candidates })
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<CandidateResponse> {
        score_draft(&self.ctx, &self.config.weights, &req.post_text, &req.draft_text)
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            checkpoint_id: self.checkpoint_id.clone(),
        }
    }
}

impl CounterService<crate::nn::TransformerLm> {
    /// Loads every model named by `config` once.
    pub fn load(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let policy = PolicyModel::load(&config.checkpoint)?;
        let ctx = RewardContext::load(&config.rewards)?;
        let gate = match (&config.misinfo_checkpoint, config.misinfo_gate) {
            (Some(dir), true) => Some(ClassifierModel::load(dir)?),
            _ => None,
        };
        let id = CheckpointMeta::weights_id(&config.checkpoint)?;
        Self::new(policy, ctx, gate, config, id)
    }
}

/// Convenience for callers holding a checkpoint path.
pub fn checkpoint_id(dir: &Path) -> Result<String> {
    CheckpointMeta::weights_id(dir)
}

#[cfg(test)]
mod tests;
