//! Five-metric evaluation, reward ablations and blinded pairwise sheets.

mod pairwise;

pub use pairwise::{
    export_pairwise_eval, tally_pairwise, Judgement, MappingEntry, PairwiseAnnotation, PairwiseEvalSheet,
    PairwiseTally, SheetItem, PAIRWISE_QUESTION,
};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::CausalLm;
use crate::par::{derive_seed, Execution};
use crate::policy::{GenerationConfig, PolicyModel};
use crate::rewards::{RewardContext, RewardVector, RewardWeights};
use crate::rl::{RLConfig, RlTrainer, WeightedReward};

/// Largest tolerated fraction of posts whose generation fails.
pub const MAX_FAILURE_RATE: f64 = 0.1;

/// Produces one response per post for a given seed.
pub trait ResponseGenerator: Send + Sync {
    fn id(&self) -> &str;
    fn respond(&self, post: &str, seed: u64) -> Result<String>;
}

pub struct PolicyGenerator<M: CausalLm> {
    pub id: String,
    pub policy: PolicyModel<M>,
    pub config: GenerationConfig,
}

impl<M: CausalLm> ResponseGenerator for PolicyGenerator<M> {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, post: &str, seed: u64) -> Result<String> {
        Ok(self.policy.generate(post, &self.config.with_seed(seed))?.text)
    }
}

/// Returns the same text for every post.
#[derive(Debug, Clone)]
pub struct FixedGenerator {
    pub id: String,
    pub text: String,
}

impl ResponseGenerator for FixedGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, _post: &str, _seed: u64) -> Result<String> {
        Ok(self.text.clone())
    }
}

/// Looks up a stored response per post, e.g. the human-written reply.
#[derive(Debug, Clone)]
pub struct LookupGenerator {
    pub id: String,
    pub responses: HashMap<String, String>,
}

impl ResponseGenerator for LookupGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, post: &str, _seed: u64) -> Result<String> {
        self.responses
            .get(post)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no stored response for post {post:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub post: String,
    pub response: String,
    pub rewards: RewardVector,
    pub perplexity: f64,
    /// Summed negative log-likelihood and token count under the reference LM.
    pub nll: f64,
    pub n_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub generator_id: String,
    pub n_examples: usize,
    pub n_failed: usize,
    pub politeness: f64,
    pub refutation: f64,
    pub evidence: f64,
    /// `exp` of the mean per-token NLL over every generated token.
    pub perplexity: f64,
    pub relevance: f64,
    pub examples: Vec<ExampleScores>,
}

impl MetricReport {
    pub const HEADER: [&'static str; 5] = ["Polite.", "Refut.", "Evid.", "Perpl.", "Rele."];

    pub fn row(&self) -> [f64; 5] {
        [self.politeness, self.refutation, self.evidence, self.perplexity, self.relevance]
    }
}

fn score_example(ctx: &RewardContext, post: &str, response: &str) -> Result<ExampleScores> {
    let lp = ctx.fluency.token_logprobs(response)?;
    Ok(ExampleScores {
        post: post.to_string(),
        response: response.to_string(),
        rewards: ctx.reward_vector(post, response)?,
        perplexity: ctx.perplexity(response)?,
        nll: -lp.iter().sum::<f64>(),
        n_tokens: lp.len(),
    })
}

/// Generates one response per post (seed `derive_seed(seed, [i])`) and
/// averages the five metrics.
pub fn evaluate_generator(
    generator: &dyn ResponseGenerator,
    posts: &[String],
    ctx: &RewardContext,
    seed: u64,
    exec: Execution,
) -> Result<MetricReport> {
    if posts.is_empty() {
        return Err(Error::invalid("no evaluation posts"));
    }
    let outcomes = exec.map(posts, |i, post| -> Result<Option<ExampleScores>> {
        match generator.respond(post, derive_seed(seed, &[i as u64])) {
            Ok(text) => score_example(ctx, post, &text).map(Some),
            Err(Error::EmptyGeneration { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut examples = Vec::with_capacity(posts.len());
    let mut failed = 0;
    for (post, outcome) in posts.iter().zip(outcomes) {
        match outcome {
            Ok(Some(ex)) => examples.push(ex),
            Ok(None) => failed += 1,
            Err(e) => {
                log::warn!("{}: failed on {post:?}: {e}", generator.id());
                failed += 1;
            }
        }
    }
    if failed as f64 > MAX_FAILURE_RATE * posts.len() as f64 || examples.is_empty() {
        return Err(Error::invalid(format!(
            "{}: generation failed on {failed} of {} posts",
            generator.id(),
            posts.len()
        )));
    }
    let n = examples.len() as f64;
    let mean = |f: fn(&ExampleScores) -> f64| examples.iter().map(f).sum::<f64>() / n;
    let nll: f64 = examples.iter().map(|e| e.nll).sum();
    let tokens: usize = examples.iter().map(|e| e.n_tokens).sum();
    Ok(MetricReport {
        generator_id: generator.id().to_string(),
        n_examples: examples.len(),
        n_failed: failed,
        politeness: mean(|e| e.rewards.politeness),
        refutation: mean(|e| e.rewards.refutation),
        evidence: mean(|e| e.rewards.evidence),
        perplexity: (nll / tokens as f64).exp(),
        relevance: mean(|e| e.rewards.coherence),
        examples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Base,
    PlusPoliteness,
    PlusRefutation,
    PlusEvidence,
    Full,
}

impl VariantName {
    pub const ALL: [VariantName; 5] = [
        VariantName::Base,
        VariantName::PlusPoliteness,
        VariantName::PlusRefutation,
        VariantName::PlusEvidence,
        VariantName::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Base => "base",
            VariantName::PlusPoliteness => "plus_politeness",
            VariantName::PlusRefutation => "plus_refutation",
            VariantName::PlusEvidence => "plus_evidence",
            VariantName::Full => "full",
        }
    }
}

impl std::str::FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: VariantName,
    pub weights: RewardWeights,
}

impl AblationVariant {
    /// Standard weights: base trains nothing, `plus_*` variants enable one
    /// property reward on top of default fluency and coherence weights.
    pub fn standard(name: VariantName) -> Self {
        let d = RewardWeights::default();
        let shared = RewardWeights {
            theta: d.theta,
            lambda: d.lambda,
            ..RewardWeights::ZERO
        };
        let weights = match name {
            VariantName::Base => RewardWeights::ZERO,
            VariantName::PlusPoliteness => RewardWeights { alpha: d.alpha, ..shared },
            VariantName::PlusRefutation => RewardWeights { beta: d.beta, ..shared },
            VariantName::PlusEvidence => RewardWeights { gamma: d.gamma, ..shared },
            VariantName::Full => d,
        };
        Self { name, weights }
    }

    pub fn all() -> Vec<Self> {
        VariantName::ALL.into_iter().map(Self::standard).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: VariantName,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn report(&self, name: VariantName) -> Option<&MetricReport> {
        self.rows.iter().find(|r| r.variant == name)?.report.as_ref()
    }

    pub fn to_text(&self) -> String {
        render_table(self.rows.iter().map(|r| (r.variant.as_str(), r.report.as_ref(), r.error.as_deref())))
    }
}

/// Plain-text table of metric reports, one row per entry.
pub fn render_table<'a>(rows: impl IntoIterator<Item = (&'a str, Option<&'a MetricReport>, Option<&'a str>)>) -> String {
    let mut out = format!("{:<18}", "variant");
    for h in MetricReport::HEADER {
        let _ = write!(out, "{h:>9}");
    }
    out.push('\n');
    for (name, report, error) in rows {
        let _ = write!(out, "{name:<18}");
        match report {
            Some(r) => {
                for v in r.row() {
                    let _ = write!(out, "{v:>9.3}");
                }
            }
            None => {
                let _ = write!(out, "  failed: {}", error.unwrap_or("unknown error"));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationSetup {
    pub rl: RLConfig,
    pub generation: GenerationConfig,
    pub eval_seed: u64,
    pub exec: Execution,
}

/// Trains one policy per non-base variant from copies of `warm` (identical
/// seeds) and evaluates every variant on the same held-out posts.
pub fn run_ablation<M: CausalLm>(
    warm: &PolicyModel<M>,
    train_posts: &[String],
    eval_posts: &[String],
    ctx: &RewardContext,
    variants: &[AblationVariant],
    setup: &AblationSetup,
) -> Result<AblationTable> {
    let has = |n: VariantName| variants.iter().any(|v| v.name == n);
    if !has(VariantName::Base) || !has(VariantName::Full) {
        return Err(Error::Config("an ablation needs at least the base and full variants".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let result = run_variant(warm, train_posts, eval_posts, ctx, variant, setup);
        if let Err(e) = &result {
            log::error!("variant {} failed: {e}", variant.name.as_str());
        }
        let (report, error) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(AblationRow {
            variant: variant.name,
            report,
            error,
        });
    }
    Ok(AblationTable { rows })
}

fn run_variant<M: CausalLm>(
    warm: &PolicyModel<M>,
    train_posts: &[String],
    eval_posts: &[String],
    ctx: &RewardContext,
    variant: &AblationVariant,
    setup: &AblationSetup,
) -> Result<MetricReport> {
    let mut policy = warm.deep_clone()?;
    if variant.name != VariantName::Base {
        variant.weights.validate()?;
        let reward = Arc::new(WeightedReward {
            ctx: ctx.clone(),
            weights: variant.weights,
        });
        let mut trainer = RlTrainer::new(policy, reward, setup.rl.clone())?.with_execution(setup.exec);
        trainer.train(train_posts, |_, _| Ok(None))?;
        policy = trainer.into_policy();
    }
    let generator = PolicyGenerator {
        id: variant.name.as_str().to_string(),
        policy,
        config: setup.generation,
    };
    evaluate_generator(&generator, eval_posts, ctx, setup.eval_seed, setup.exec)
}
