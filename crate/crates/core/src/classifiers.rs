//! Reward and corpus-construction classifiers.
//!
//! The encoder mean-pools learned token embeddings. Single-text tasks feed
//! the pooled response vector `v` to a linear softmax head; pairwise tasks
//! encode `post <sep> response`, pool each side separately and feed
//! `[u, v, |u - v|, u * v]`.

use std::path::Path;
use std::sync::Arc;

use candle_core::{Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedPair, CounterResponse, MisinfoPost, Politeness, ResponseOrigin};
use crate::error::{Error, Result};
use crate::nn::{device, CheckpointMeta, Init, Params, Source};
use crate::par::seeded_rng;
use crate::text::{Tokenizer, SEP};

/// Decision threshold for evaluation and the cascade.
pub const THRESHOLD: f64 = 0.5;
const CHECKPOINT_KIND: &str = "classifier";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Politeness,
    Refutation,
    Evidence,
    Misinfo,
    Disbelief,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    SingleText,
    TextPair,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Politeness,
        Task::Refutation,
        Task::Evidence,
        Task::Misinfo,
        Task::Disbelief,
    ];

    pub fn arity(self) -> Arity {
        match self {
            Task::Refutation | Task::Evidence => Arity::TextPair,
            _ => Arity::SingleText,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Politeness => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Politeness => "politeness",
            Task::Refutation => "refutation",
            Task::Evidence => "evidence",
            Task::Misinfo => "misinfo",
            Task::Disbelief => "disbelief",
        }
    }

    /// Whether a class label counts as positive when resolving to binary.
    /// Politeness resolves to polite-versus-rest.
    pub fn is_positive_label(self, label: usize) -> bool {
        match self {
            Task::Politeness => label == Politeness::Polite.index(),
            _ => label == 1,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(default)]
    pub post: Option<String>,
    pub text: String,
    pub label: usize,
}

impl LabeledExample {
    pub fn single(text: &str, label: usize) -> Self {
        Self {
            post: None,
            text: text.to_string(),
            label,
        }
    }

    pub fn pair(post: &str, text: &str, label: usize) -> Self {
        Self {
            post: Some(post.to_string()),
            text: text.to_string(),
            label,
        }
    }

    /// Training example for `task` from an annotated pair, if labeled.
    pub fn from_annotated(pair: &AnnotatedPair, task: Task) -> Option<Self> {
        let r = &pair.response;
        let post = &pair.post.text;
        match task {
            Task::Politeness => Some(Self::single(&r.text, r.politeness?.index())),
            Task::Refutation => Some(Self::pair(post, &r.text, r.refuting? as usize)),
            Task::Evidence => Some(Self::pair(post, &r.text, r.evidence? as usize)),
            Task::Misinfo | Task::Disbelief => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub folds: usize,
    pub embed_dim: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 0.02,
            seed: 0,
            folds: 5,
            embed_dim: 32,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.embed_dim == 0 || self.folds == 0 {
            return Err(Error::Config("classifier epochs, batch size, folds and width must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("classifier learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassifierMeta {
    pub task: Task,
    pub arity: Arity,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub version: u32,
    /// Per-class counts of the (possibly balanced) training set.
    pub class_counts: Vec<usize>,
}

/// Anything that maps text (or a post/response pair) to a score in `[0, 1]`.
pub trait TextScorer: Send + Sync {
    fn arity(&self) -> Arity;
    fn score(&self, post: Option<&str>, response: &str) -> Result<f64>;
}

/// Scores every input with the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub value: f64,
    pub arity: Arity,
}

impl TextScorer for ConstantScorer {
    fn arity(&self) -> Arity {
        self.arity
    }

    fn score(&self, post: Option<&str>, response: &str) -> Result<f64> {
        check_inputs(self.arity, post, response)?;
        Ok(self.value)
    }
}

fn check_inputs(arity: Arity, post: Option<&str>, response: &str) -> Result<()> {
    if response.is_empty() {
        return Err(Error::invalid("response text is empty"));
    }
    match (arity, post) {
        (Arity::SingleText, None) => Ok(()),
        (Arity::TextPair, Some(p)) if !p.is_empty() => Ok(()),
        (Arity::TextPair, Some(_)) => Err(Error::invalid("post text is empty")),
        (Arity::SingleText, Some(_)) => Err(Error::invalid("single-text classifier was given a post")),
        (Arity::TextPair, None) => Err(Error::invalid("pairwise classifier requires a post")),
    }
}

/// Ordinal politeness score from `[P(polite), P(neutral), P(rude)]`.
pub fn politeness_scalar(probs: &[f64]) -> f64 {
    probs[Politeness::Polite.index()] + 0.5 * probs[Politeness::Neutral.index()]
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    meta: ClassifierMeta,
    tokenizer: Arc<Tokenizer>,
    params: Params,
    embedding: Var,
    head_weight: Var,
    head_bias: Var,
}

impl ClassifierModel {
    fn from_source(meta: ClassifierMeta, tokenizer: Arc<Tokenizer>, src: &mut Source<'_>) -> Result<Self> {
        let d = meta.embed_dim;
        let features = match meta.arity {
            Arity::SingleText => d,
            Arity::TextPair => 4 * d,
        };
        let k = meta.task.n_classes();
        let mut params = Params::default();
        let embedding = params.take(src, "embedding", &[meta.vocab_size, d], Init::Normal(0.1))?;
        let head_weight = params.take(src, "head.weight", &[features, k], Init::Normal(0.1))?;
        let head_bias = params.take(src, "head.bias", &[k], Init::Zeros)?;
        Ok(Self {
            meta,
            tokenizer,
            params,
            embedding,
            head_weight,
            head_bias,
        })
    }

    pub fn meta(&self) -> &ClassifierMeta {
        &self.meta
    }

    pub fn task(&self) -> Task {
        self.meta.task
    }

    pub fn tokenizer(&self) -> &Arc<Tokenizer> {
        &self.tokenizer
    }

    fn pool(&self, text: &str) -> Result<Tensor> {
        let ids = self.tokenizer.encode(text)?;
        if ids.is_empty() {
            return Err(Error::invalid("text encodes to no tokens"));
        }
        let idx = Tensor::new(ids.as_slice(), &device())?;
        Ok(self.embedding.as_tensor().index_select(&idx, 0)?.mean(0)?)
    }

    /// Splits an encoded `post <sep> response` sequence into its two sides.
    fn features(&self, post: Option<&str>, response: &str) -> Result<Tensor> {
        check_inputs(self.meta.arity, post, response)?;
        match post {
            None => self.pool(response),
            Some(post) => {
                let joined = join_pair(&self.tokenizer, post, response)?;
                let sep = joined.iter().position(|&t| t == SEP).expect("separator present");
                let side = |ids: &[u32]| -> Result<Tensor> {
                    let idx = Tensor::new(ids, &device())?;
                    Ok(self.embedding.as_tensor().index_select(&idx, 0)?.mean(0)?)
                };
                let u = side(&joined[..sep])?;
                let v = side(&joined[sep + 1..])?;
                let diff = (&u - &v)?.abs()?;
                let prod = (&u * &v)?;
                Ok(Tensor::cat(&[&u, &v, &diff, &prod], 0)?)
            }
        }
    }

    fn logits(&self, post: Option<&str>, response: &str) -> Result<Tensor> {
        let f = self.features(post, response)?.unsqueeze(0)?;
        Ok(f.matmul(self.head_weight.as_tensor())?
            .broadcast_add(self.head_bias.as_tensor())?
            .squeeze(0)?)
    }

    /// Class probabilities.
    pub fn probabilities(&self, post: Option<&str>, response: &str) -> Result<Vec<f64>> {
        let logits = self.logits(post, response)?.to_vec1::<f64>()?;
        Ok(crate::nn::log_softmax(&logits).into_iter().map(f64::exp).collect())
    }

    pub fn predict_class(&self, post: Option<&str>, response: &str) -> Result<usize> {
        let p = self.probabilities(post, response)?;
        Ok(argmax(&p))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut meta = CheckpointMeta::new(CHECKPOINT_KIND, &self.tokenizer, self.meta.seed, &self.meta)?;
        meta.provenance = serde_json::json!({ "class_counts": self.meta.class_counts });
        meta.save(dir, &self.tokenizer, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, tokenizer, tensors) = CheckpointMeta::load(dir, CHECKPOINT_KIND)?;
        let cmeta: ClassifierMeta = serde_json::from_value(meta.config)?;
        if cmeta.vocab_size != tokenizer.vocab_size() || cmeta.arity != cmeta.task.arity() {
            return Err(Error::Checkpoint("classifier metadata is inconsistent".into()));
        }
        Self::from_source(cmeta, Arc::new(tokenizer), &mut Source::Load(&tensors))
    }
}

impl TextScorer for ClassifierModel {
    fn arity(&self) -> Arity {
        self.meta.arity
    }

    fn score(&self, post: Option<&str>, response: &str) -> Result<f64> {
        let p = self.probabilities(post, response)?;
        Ok(match self.meta.task {
            Task::Politeness => politeness_scalar(&p),
            _ => p[1],
        }
        .clamp(0.0, 1.0))
    }
}

/// Scores `response` (and `post` for pairwise models) with `model`.
pub fn score(model: &ClassifierModel, post: Option<&str>, response: &str) -> Result<f64> {
    model.score(post, response)
}

/// Encodes `post <sep> response`.
pub fn join_pair(tokenizer: &Tokenizer, post: &str, response: &str) -> Result<Vec<u32>> {
    let mut ids = tokenizer.encode(post)?;
    ids.push(SEP);
    ids.extend(tokenizer.encode(response)?);
    Ok(ids)
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn class_counts(examples: &[LabeledExample], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for e in examples {
        counts[e.label] += 1;
    }
    counts
}

/// Downsamples every present class to the size of the smallest one.
pub fn balance_classes(examples: &[LabeledExample], n_classes: usize, seed: u64) -> Vec<LabeledExample> {
    let counts = class_counts(examples, n_classes);
    let Some(&target) = counts.iter().filter(|&&c| c > 0).min() else {
        return Vec::new();
    };
    let mut rng = seeded_rng(seed);
    let mut keep = vec![false; examples.len()];
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == class).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(target) {
            keep[i] = true;
        }
    }
    examples
        .iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then(|| e.clone()))
        .collect()
}

/// Trains a classifier for `task`. Evidence data is class-balanced first.
pub fn train_classifier(
    examples: &[LabeledExample],
    task: Task,
    tokenizer: Arc<Tokenizer>,
    config: &ClassifierTrainConfig,
) -> Result<ClassifierModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let k = task.n_classes();
    if let Some(bad) = examples.iter().find(|e| e.label >= k) {
        return Err(Error::invalid(format!("label {} out of range for {}", bad.label, task.name())));
    }
    for e in examples {
        check_inputs(task.arity(), e.post.as_deref(), &e.text)?;
    }
    let data = if task == Task::Evidence {
        balance_classes(examples, k, config.seed)
    } else {
        examples.to_vec()
    };
    let counts = class_counts(&data, k);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("training data must contain at least two classes"));
    }

    let meta = ClassifierMeta {
        task,
        arity: task.arity(),
        embed_dim: config.embed_dim,
        vocab_size: tokenizer.vocab_size(),
        seed: config.seed,
        version: MODEL_VERSION,
        class_counts: counts,
    };
    let mut rng = seeded_rng(config.seed);
    let model = ClassifierModel::from_source(meta, tokenizer, &mut Source::Init(&mut rng))?;
    let mut opt = AdamW::new(
        model.params.vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut rows = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.push(model.logits(data[i].post.as_deref(), &data[i].text)?);
            }
            let logits = Tensor::stack(&rows, 0)?;
            let labels: Vec<u32> = batch.iter().map(|&i| data[i].label as u32).collect();
            let loss = cross_entropy(&logits, &labels)?;
            opt.backward_step(&loss)?;
        }
    }
    Ok(model)
}

fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let idx = Tensor::new(labels, &device())?.unsqueeze(1)?;
    Ok(logp.gather(&idx, 1)?.neg()?.mean_all()?)
}

/// Fraction of examples whose argmax class equals the label.
pub fn training_accuracy(model: &ClassifierModel, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    let mut correct = 0;
    for e in examples {
        if model.predict_class(e.post.as_deref(), &e.text)? == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // harmonic mean of precision and recall, computed from counts so
        // that exact ratios stay exact
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
        }
    }

    /// Counts from `(predicted_positive, actually_positive)` pairs.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }
}

/// Positive-class precision/recall/F1 at [`THRESHOLD`].
pub fn evaluate_classifier(model: &ClassifierModel, heldout: &[LabeledExample]) -> Result<EvalReport> {
    if heldout.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }
    let task = model.task();
    let mut outcomes = Vec::with_capacity(heldout.len());
    for e in heldout {
        let s = model.score(e.post.as_deref(), &e.text)?;
        outcomes.push((s > THRESHOLD, task.is_positive_label(e.label)));
    }
    Ok(EvalReport::from_predictions(outcomes))
}

/// k-fold cross-validation over a seeded permutation.
pub fn cross_validate(
    examples: &[LabeledExample],
    task: Task,
    tokenizer: Arc<Tokenizer>,
    config: &ClassifierTrainConfig,
) -> Result<Vec<EvalReport>> {
    config.validate()?;
    if config.folds < 2 || examples.len() < config.folds {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 folds and one example per fold (folds={}, n={})",
            config.folds,
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut seeded_rng(config.seed ^ 0xF01D));
    (0..config.folds)
        .map(|fold| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (pos, &i) in order.iter().enumerate() {
                if pos % config.folds == fold {
                    test.push(examples[i].clone());
                } else {
                    train.push(examples[i].clone());
                }
            }
            let model = train_classifier(&train, task, tokenizer.clone(), config)?;
            evaluate_classifier(&model, &test)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostWithReplies {
    pub post: MisinfoPost,
    pub replies: Vec<String>,
}

/// A machine-identified counter-response awaiting manual verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair: AnnotatedPair,
    pub misinfo_score: f64,
    pub disbelief_score: f64,
    pub verified: bool,
}

/// Keeps (post, reply) where the post scores as misinformation and the reply
/// as disbelief, both strictly above `threshold`.
pub fn cascade_with_threshold(
    misinfo: &dyn TextScorer,
    disbelief: &dyn TextScorer,
    posts: &[PostWithReplies],
    threshold: f64,
) -> Result<Vec<CandidatePair>> {
    let mut out = Vec::new();
    for item in posts {
        if item.replies.is_empty() {
            continue;
        }
        let m = misinfo.score(None, &item.post.text)?;
        if m <= threshold {
            continue;
        }
        for reply in &item.replies {
            let d = disbelief.score(None, reply)?;
            if d > threshold {
                out.push(CandidatePair {
                    pair: AnnotatedPair {
                        post: item.post.clone(),
                        response: CounterResponse::new(reply, None, None, None, ResponseOrigin::InTheWild)?,
                    },
                    misinfo_score: m,
                    disbelief_score: d,
                    verified: false,
                });
            }
        }
    }
    Ok(out)
}

pub fn cascade_identify_counters(
    misinfo: &dyn TextScorer,
    disbelief: &dyn TextScorer,
    posts: &[PostWithReplies],
) -> Result<Vec<CandidatePair>> {
    cascade_with_threshold(misinfo, disbelief, posts, THRESHOLD)
}
