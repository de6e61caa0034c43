//! Reward-increment policy-gradient training.
//!
//! Each step samples one response per post with nucleus sampling, scores it,
//! and takes one Adam step on the batch mean of `-r * log p(response | post)`.
//! The reward is a constant with respect to the policy parameters.

mod record;

pub use record::{StepRecord, TrainLog};

use std::sync::Arc;

use candle_core::{backprop::GradStore, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CausalLm, Params};
use crate::par::{derive_seed, Execution};
use crate::policy::{GenerationConfig, PolicyModel};
use crate::rewards::{composite_reward, RewardContext, RewardVector, RewardWeights};

/// `-reward * logprob`.
pub fn rl_loss(reward: f64, logprob: f64) -> f64 {
    -reward * logprob
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelection {
    Final,
    BestMeanReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RLConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub samples_per_post: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub generation: GenerationConfig,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub selection: CheckpointSelection,
    /// Extra attempts for a failed step, each with fresh sampling seeds.
    pub max_retries: usize,
    /// Subtract a moving average of past rewards. Off by default.
    pub baseline: bool,
    pub baseline_decay: f64,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            total_steps: 10_000,
            learning_rate: 1e-5,
            seed: 0,
            samples_per_post: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            generation: GenerationConfig::default(),
            checkpoint_every: 0,
            selection: CheckpointSelection::Final,
            max_retries: 2,
            baseline: false,
            baseline_decay: 0.9,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.samples_per_post == 0 {
            return fail("batch size and samples per post must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return fail("baseline decay must lie in [0, 1)");
        }
        self.generation.validate()
    }
}

/// Scalar episodic reward for one generated response.
pub trait EpisodeReward: Send + Sync {
    fn score(&self, post: &str, response: &str) -> Result<EpisodeScore>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeScore {
    pub components: Option<RewardVector>,
    pub reward: f64,
}

/// The composite reward over a frozen scorer ensemble.
#[derive(Debug, Clone)]
pub struct WeightedReward {
    pub ctx: RewardContext,
    pub weights: RewardWeights,
}

impl EpisodeReward for WeightedReward {
    fn score(&self, post: &str, response: &str) -> Result<EpisodeScore> {
        let v = self.ctx.reward_vector(post, response)?;
        Ok(EpisodeScore {
            components: Some(v),
            reward: composite_reward(&self.weights, &v),
        })
    }
}

/// Reward 1 for one exact response string, 0 for anything else.
#[derive(Debug, Clone)]
pub struct TemplateReward {
    pub rewarded: String,
}

impl EpisodeReward for TemplateReward {
    fn score(&self, _post: &str, response: &str) -> Result<EpisodeScore> {
        Ok(EpisodeScore {
            components: None,
            reward: if response == self.rewarded { 1.0 } else { 0.0 },
        })
    }
}

/// One scored sample: the sampled ids (as scored) and its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub post: String,
    pub token_ids: Vec<u32>,
    pub reward: f64,
}

/// Batch mean of `-(r - b) * log p(ids | post)` as a differentiable scalar.
pub fn batch_loss<M: CausalLm>(
    policy: &PolicyModel<M>,
    episodes: &[Episode],
    baseline: f64,
    exec: Execution,
) -> Result<Tensor> {
    if episodes.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let terms = exec.try_map(episodes, |_, ep| -> Result<Tensor> {
        let prompt = policy.prompt_ids(&ep.post)?;
        let logp = policy.logprob_tensor(&prompt, &ep.token_ids)?;
        Ok((logp * -(ep.reward - baseline))?)
    })?;
    Ok((Tensor::stack(&terms, 0)?.sum_all()? / episodes.len() as f64)?)
}

/// Gradient of `loss` flattened in parameter order (zeros where absent).
pub fn flat_gradient(params: &Params, grads: &GradStore) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.num_parameters());
    for (_, var) in params.iter() {
        match grads.get(var.as_tensor()) {
            Some(g) => out.extend(g.flatten_all()?.to_vec1::<f64>()?),
            None => out.extend(std::iter::repeat(0.0).take(var.elem_count())),
        }
    }
    Ok(out)
}

/// Owns a policy and its optimizer state for the duration of training.
pub struct RlTrainer<M: CausalLm> {
    policy: PolicyModel<M>,
    reward: Arc<dyn EpisodeReward>,
    config: RLConfig,
    exec: Execution,
    opt: AdamW,
    steps_done: usize,
    baseline: Option<f64>,
}

impl<M: CausalLm> RlTrainer<M> {
    pub fn new(policy: PolicyModel<M>, reward: Arc<dyn EpisodeReward>, config: RLConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(
            policy.model().params().vars(),
            ParamsAdamW {
                lr: config.learning_rate,
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
                weight_decay: 0.0,
            },
        )?;
        Ok(Self {
            policy,
            reward,
            config,
            exec: Execution::default(),
            opt,
            steps_done: 0,
            baseline: None,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn policy(&self) -> &PolicyModel<M> {
        &self.policy
    }

    pub fn into_policy(self) -> PolicyModel<M> {
        self.policy
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Samples and scores one response per (post, sample) slot.
    fn collect(&self, posts: &[&str], attempt: usize) -> Result<(Vec<Episode>, Vec<Option<RewardVector>>, usize)> {
        let k = self.config.samples_per_post;
        let slots: Vec<(usize, usize)> = (0..posts.len()).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
        let step = self.steps_done as u64;
        let outcomes = self.exec.map(&slots, |_, &(i, j)| -> Result<Option<(Episode, Option<RewardVector>)>> {
            let seed = derive_seed(self.config.seed, &[step, attempt as u64, i as u64, j as u64]);
            let gen = match self.policy.generate(posts[i], &self.config.generation.with_seed(seed)) {
                Ok(g) => g,
                Err(Error::EmptyGeneration { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let score = self.reward.score(posts[i], &gen.text)?;
            if !(score.reward >= 0.0 && score.reward.is_finite()) {
                return Err(Error::invalid(format!("reward must be finite and non-negative, got {}", score.reward)));
            }
            let episode = Episode {
                post: posts[i].to_string(),
                token_ids: gen.token_ids,
                reward: score.reward,
            };
            Ok(Some((episode, score.components)))
        });
        let mut episodes = Vec::with_capacity(slots.len());
        let mut components = Vec::with_capacity(slots.len());
        let mut failed = 0;
        for outcome in outcomes {
            match outcome? {
                Some((ep, c)) => {
                    episodes.push(ep);
                    components.push(c);
                }
                None => failed += 1,
            }
        }
        Ok((episodes, components, failed))
    }

    fn try_step(&mut self, posts: &[&str], attempt: usize) -> Result<StepRecord> {
        let (episodes, components, failed) = self.collect(posts, attempt)?;
        if episodes.is_empty() {
            return Err(Error::Step {
                step: self.steps_done,
                message: "every generation in the batch was empty".into(),
            });
        }
        let n = episodes.len() as f64;
        let mean_reward = episodes.iter().map(|e| e.reward).sum::<f64>() / n;
        let baseline = if self.config.baseline { self.baseline.unwrap_or(0.0) } else { 0.0 };

        let loss = batch_loss(&self.policy, &episodes, baseline, self.exec)?;
        let loss_value = loss.to_scalar::<f64>()?;
        let mut grads = loss.backward()?;
        // A zero reward prunes the graph; Adam still needs a (zero) gradient
        // for every variable so that its moment estimates advance.
        for var in self.policy.model().params().vars() {
            if grads.get(var.as_tensor()).is_none() {
                grads.insert(var.as_tensor(), var.as_tensor().zeros_like()?);
            }
        }
        let grad = flat_gradient(self.policy.model().params(), &grads)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        self.opt.step(&grads)?;

        if self.config.baseline {
            let d = self.config.baseline_decay;
            self.baseline = Some(match self.baseline {
                Some(b) => d * b + (1.0 - d) * mean_reward,
                None => mean_reward,
            });
        }

        let mean_components = mean_vector(&components);
        let record = StepRecord {
            step: self.steps_done,
            mean_composite: mean_reward,
            mean_components,
            loss: loss_value,
            grad_norm,
            n_samples: episodes.len(),
            n_failed: failed,
            mean_response_tokens: episodes.iter().map(|e| e.token_ids.len()).sum::<usize>() as f64 / n,
            baseline: self.config.baseline.then_some(baseline),
            checkpoint: None,
        };
        self.steps_done += 1;
        Ok(record)
    }

    /// One update on `posts`. Failed steps are retried with fresh seeds.
    pub fn step(&mut self, posts: &[&str]) -> Result<StepRecord> {
        if posts.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut attempt = 0;
        loop {
            match self.try_step(posts, attempt) {
                Ok(r) => return Ok(r),
                Err(e @ Error::Step { .. }) if attempt < self.config.max_retries => {
                    log::warn!("{e}; retrying");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs `total_steps` steps over `posts` reused cyclically. `checkpoint`
    /// is called every `checkpoint_every` steps and its return value is logged.
    pub fn train<S, F>(&mut self, posts: &[S], mut checkpoint: F) -> Result<TrainLog>
    where
        S: AsRef<str>,
        F: FnMut(usize, &PolicyModel<M>) -> Result<Option<String>>,
    {
        let mut log = TrainLog::default();
        if self.config.total_steps == 0 {
            return Ok(log);
        }
        if posts.is_empty() {
            return Err(Error::invalid("no training posts"));
        }
        let mut best: Option<(f64, PolicyModel<M>)> = None;
        let b = self.config.batch_size;
        for s in 0..self.config.total_steps {
            let batch: Vec<&str> = (0..b).map(|i| posts[(s * b + i) % posts.len()].as_ref()).collect();
            let mut record = self.step(&batch)?;
            let every = self.config.checkpoint_every;
            if every > 0 && (s + 1) % every == 0 {
                record.checkpoint = checkpoint(s + 1, &self.policy)?;
            }
            if self.config.selection == CheckpointSelection::BestMeanReward
                && best.as_ref().is_none_or(|(r, _)| record.mean_composite > *r)
            {
                best = Some((record.mean_composite, self.policy.deep_clone()?));
            }
            log::info!(
                "step {} reward {:.4} loss {:.4} grad {:.4}",
                record.step,
                record.mean_composite,
                record.loss,
                record.grad_norm
            );
            log.records.push(record);
        }
        if let Some((_, policy)) = best {
            self.policy = policy;
        }
        Ok(log)
    }
}

fn mean_vector(items: &[Option<RewardVector>]) -> Option<RewardVector> {
    let all: Vec<&RewardVector> = items.iter().map(Option::as_ref).collect::<Option<_>>()?;
    if all.is_empty() {
        return None;
    }
    let n = all.len() as f64;
    let mean = |f: fn(&RewardVector) -> f64| all.iter().map(|v| f(v)).sum::<f64>() / n;
    Some(RewardVector {
        politeness: mean(|v| v.politeness),
        refutation: mean(|v| v.refutation),
        evidence: mean(|v| v.evidence),
        fluency: mean(|v| v.fluency),
        coherence: mean(|v| v.coherence),
    })
}

#[cfg(test)]
mod tests;
