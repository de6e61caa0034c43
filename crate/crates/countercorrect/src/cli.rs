use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use countercorrect_core::classifiers::{
    cross_validate, evaluate_classifier, train_classifier, ClassifierModel, ClassifierTrainConfig, LabeledExample,
    Task, TextScorer,
};
use countercorrect_core::corpus::{self, AnnotatedPair};
use countercorrect_core::eval::{
    evaluate_generator, export_pairwise_eval, run_ablation, tally_pairwise, AblationSetup, AblationVariant,
    PairwiseAnnotation, PairwiseEvalSheet, PolicyGenerator, VariantName,
};
use countercorrect_core::fixtures;
use countercorrect_core::nn::{TransformerConfig, TransformerLm};
use countercorrect_core::par::Execution;
use countercorrect_core::policy::{FitConfig, GenerationConfig, PolicyModel};
use countercorrect_core::rewards::{ReferenceLm, RewardContext, RewardWeights};
use countercorrect_core::rl::{CheckpointSelection, RLConfig, RlTrainer, WeightedReward};
use countercorrect_core::service::{CounterService, ServiceConfig};
use countercorrect_core::text::Tokenizer;

use crate::read_toml;

type Policy = PolicyModel<TransformerLm>;

#[derive(Debug, Parser)]
#[command(name = "countercorrect", version, about = "Generate and score replies that counter misinformation posts")]
pub struct Cli {
    /// Run batch work on the calling thread instead of the thread pool.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect, clean and split pair corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train, evaluate and apply text classifiers.
    #[command(subcommand)]
    Clf(ClfCmd),
    /// Warm-start, sample from and train language models.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Reinforcement learning against the composite reward.
    #[command(subcommand)]
    Rl(RlCmd),
    /// Automatic metrics, ablations and pairwise human evaluation sheets.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Serve generation and scoring over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Label counts and proportions; `-` reads the packaged corpus.
    Stats {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Keep pairs whose response is fully labeled and has a positive dimension.
    Clean { input: PathBuf, output: PathBuf },
    /// Seeded train/validation/test split into `<out-dir>/{train,validation,test}.jsonl`.
    Split {
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Write synthetic template pairs with planted labels.
    Synth {
        #[arg(long, default_value_t = 96)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        output: PathBuf,
    },
    /// Fit a subword vocabulary on post and response texts.
    Vocab {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Politeness,
    Refutation,
    Evidence,
    Misinfo,
    Disbelief,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Politeness => Task::Politeness,
            TaskArg::Refutation => Task::Refutation,
            TaskArg::Evidence => Task::Evidence,
            TaskArg::Misinfo => Task::Misinfo,
            TaskArg::Disbelief => Task::Disbelief,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExampleSource {
    /// Pair corpus (JSONL); labels are read from the annotated response.
    #[arg(long, conflicts_with = "examples")]
    data: Option<PathBuf>,
    /// Labeled examples (JSONL of `{post?, text, label}`).
    #[arg(long)]
    examples: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ClfCmd {
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[command(flatten)]
        source: ExampleSource,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Also report k-fold cross-validation.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: ExampleSource,
    },
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        post: Option<String>,
        #[arg(long)]
        text: String,
    },
}

#[derive(Debug, Args)]
pub struct LmArgs {
    /// Tokenizer file from `corpus vocab`; fitted on the data when omitted.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 192)]
    context: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl LmArgs {
    fn tokenizer(&self, pairs: &[AnnotatedPair]) -> anyhow::Result<Arc<Tokenizer>> {
        Ok(Arc::new(match &self.tokenizer {
            Some(path) => load_tokenizer(path)?,
            None => Tokenizer::train(&pair_texts(pairs), 200),
        }))
    }

    fn transformer(&self, vocab: usize) -> TransformerConfig {
        TransformerConfig {
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            context_window: self.context,
            d_ff: 4 * self.d_model,
            ..TransformerConfig::small(vocab)
        }
    }

    fn fit(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

impl SamplingArgs {
    fn config(&self) -> GenerationConfig {
        GenerationConfig {
            top_p: self.top_p,
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            ..GenerationConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum PolicyCmd {
    /// Supervised warm start on post/response pairs.
    Warmstart {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long)]
        out: PathBuf,
    },
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        post: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Fit the frozen reference model used for fluency and coherence.
    TrainReference {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// TOML file with `alpha`, `beta`, `gamma`, `theta`, `lambda`.
    #[arg(long)]
    weights_config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

impl WeightArgs {
    fn resolve(&self) -> anyhow::Result<RewardWeights> {
        let mut w: RewardWeights = match &self.weights_config {
            Some(path) => read_toml(path)?,
            None => RewardWeights::default(),
        };
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut w.alpha, self.alpha);
        set(&mut w.beta, self.beta);
        set(&mut w.gamma, self.gamma);
        set(&mut w.theta, self.theta);
        set(&mut w.lambda, self.lambda);
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Args)]
pub struct RlArgs {
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subtract a moving average of past rewards.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    sampling: SamplingArgs,
}

impl RlArgs {
    fn config(&self) -> RLConfig {
        RLConfig {
            batch_size: self.batch,
            total_steps: self.steps,
            learning_rate: self.lr,
            seed: self.seed,
            baseline: self.baseline,
            generation: self.sampling.config(),
            ..RLConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum RlCmd {
    Train {
        /// Warm-started policy checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reward model directory.
        #[arg(long)]
        rewards: PathBuf,
        /// Training posts (pair corpus; responses are ignored).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        rl: RlArgs,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Keep the checkpoint with the best mean reward instead of the last.
        #[arg(long)]
        keep_best: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Five automatic metrics for one policy on held-out posts.
    Run {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Write the full report (with per-example scores) as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Train and evaluate the reward ablation variants from one warm start.
    Ablation {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[command(flatten)]
        rl: RlArgs,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Write an annotator sheet and hidden mapping comparing two policies.
    PairwiseExport {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "a")]
        a_name: String,
        #[arg(long, default_value = "b")]
        b_name: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Agreed wins per method from annotations (JSONL of `{item_id, annotator, label}`).
    PairwiseTally {
        #[arg(long)]
        sheet_dir: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML service configuration; environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
}

/// Environment overrides applied on top of the config file.
pub const ENV_BIND: &str = "COUNTERCORRECT_BIND";
pub const ENV_CHECKPOINT: &str = "COUNTERCORRECT_CHECKPOINT";
pub const ENV_REWARDS: &str = "COUNTERCORRECT_REWARDS";
pub const ENV_MISINFO_CHECKPOINT: &str = "COUNTERCORRECT_MISINFO_CHECKPOINT";

/// Reads the service config file (if any) and applies env overrides from `env`.
pub fn service_config(
    path: Option<&Path>,
    env: impl Fn(&str) -> Option<String>,
) -> anyhow::Result<ServiceConfig> {
    let mut config: ServiceConfig = match path {
        Some(p) => read_toml(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = env(ENV_BIND) {
        config.bind = v;
    }
    if let Some(v) = env(ENV_CHECKPOINT) {
        config.checkpoint = v.into();
    }
    if let Some(v) = env(ENV_REWARDS) {
        config.rewards = v.into();
    }
    if let Some(v) = env(ENV_MISINFO_CHECKPOINT) {
        config.misinfo_checkpoint = Some(v.into());
        config.misinfo_gate = true;
    }
    config.validate()?;
    Ok(config)
}

impl Cli {
    pub fn run(self) -> anyhow::Result<()> {
        let exec = if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        };
        match self.command {
            Command::Corpus(cmd) => corpus_cmd(cmd),
            Command::Clf(cmd) => clf_cmd(cmd),
            Command::Policy(cmd) => policy_cmd(cmd),
            Command::Rl(cmd) => rl_cmd(cmd, exec),
            Command::Eval(cmd) => eval_cmd(cmd, exec),
            Command::Serve(args) => serve(args, exec),
        }
    }
}

fn load_corpus(path: &Path) -> anyhow::Result<Vec<AnnotatedPair>> {
    if path == Path::new("-") {
        return Ok(corpus::packaged_in_the_wild());
    }
    corpus::load_pairs(path).with_context(|| format!("loading {}", path.display()))
}

/// Distinct post texts in corpus order.
fn posts_of(pairs: &[AnnotatedPair]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(p.post.text.clone()))
        .map(|p| p.post.text.clone())
        .collect()
}

fn pair_texts(pairs: &[AnnotatedPair]) -> Vec<String> {
    pairs
        .iter()
        .flat_map(|p| [p.post.text.clone(), p.response.text.clone()])
        .collect()
}

fn load_tokenizer(path: &Path) -> anyhow::Result<Tokenizer> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Tokenizer::from_json(&text)?)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn corpus_cmd(cmd: CorpusCmd) -> anyhow::Result<()> {
    match cmd {
        CorpusCmd::Stats { file, json } => {
            let stats = corpus::compute_stats(&load_corpus(&file)?);
            if json {
                return print_json(&stats);
            }
            let p = &stats.politeness;
            println!("pairs       {}", stats.n_pairs);
            println!("politeness  polite {} neutral {} rude {}", p.polite, p.neutral, p.rude);
            println!("evidence    yes {} no {}", stats.evidence.yes, stats.evidence.no);
            println!("refuting    yes {} no {}", stats.refuting.yes, stats.refuting.no);
            println!("rude share  {:.2}%", 100.0 * stats.rude_fraction());
        }
        CorpusCmd::Clean { input, output } => {
            let pairs = load_corpus(&input)?;
            let kept = corpus::filter_clean(&pairs)?;
            corpus::save_pairs(&output, &kept)?;
            log::info!("kept {} of {} pairs", kept.len(), pairs.len());
        }
        CorpusCmd::Split {
            input,
            ratios,
            seed,
            out_dir,
        } => {
            let [a, b, c] = ratios[..] else {
                bail!("--ratios takes exactly three values");
            };
            let split = corpus::split(&load_corpus(&input)?, [a, b, c], seed)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
                corpus::save_pairs(&out_dir.join(format!("{name}.jsonl")), part)?;
                println!("{name:<10} {}", part.len());
            }
        }
        CorpusCmd::Synth { n, seed, output } => {
            corpus::save_pairs(&output, &fixtures::fixture_pairs(n, seed))?;
        }
        CorpusCmd::Vocab { inputs, merges, out } => {
            let mut texts = Vec::new();
            for path in &inputs {
                texts.extend(pair_texts(&load_corpus(path)?));
            }
            let tokenizer = Tokenizer::train(&texts, merges);
            fs::write(&out, tokenizer.to_json())?;
            println!("vocabulary size {}", tokenizer.vocab_size());
        }
    }
    Ok(())
}

fn examples_for(task: Task, source: &ExampleSource) -> anyhow::Result<Vec<LabeledExample>> {
    match (&source.data, &source.examples) {
        (Some(data), None) => {
            let pairs = load_corpus(data)?;
            let out: Vec<_> = pairs.iter().filter_map(|p| LabeledExample::from_annotated(p, task)).collect();
            if out.is_empty() {
                bail!("no pair in {} carries a {} label; pass --examples", data.display(), task.name());
            }
            Ok(out)
        }
        (None, Some(path)) => read_jsonl(path),
        _ => bail!("pass exactly one of --data or --examples"),
    }
}

fn clf_cmd(cmd: ClfCmd) -> anyhow::Result<()> {
    match cmd {
        ClfCmd::Train {
            task,
            source,
            tokenizer,
            seed,
            epochs,
            lr,
            folds,
            out,
        } => {
            let task = Task::from(task);
            let examples = examples_for(task, &source)?;
            let tokenizer = Arc::new(load_tokenizer(&tokenizer)?);
            let mut config = ClassifierTrainConfig {
                seed,
                ..ClassifierTrainConfig::default()
            };
            config.epochs = epochs.unwrap_or(config.epochs);
            config.learning_rate = lr.unwrap_or(config.learning_rate);
            if let Some(k) = folds {
                config.folds = k;
                for (i, r) in cross_validate(&examples, task, tokenizer.clone(), &config)?.iter().enumerate() {
                    println!("fold {i}: precision {:.3} recall {:.3} f1 {:.3}", r.precision, r.recall, r.f1);
                }
            }
            let model = train_classifier(&examples, task, tokenizer, &config)?;
            model.save(&out)?;
            log::info!("saved {} classifier to {}", task.name(), out.display());
        }
        ClfCmd::Eval { checkpoint, source } => {
            let model = ClassifierModel::load(&checkpoint)?;
            let examples = examples_for(model.task(), &source)?;
            print_json(&evaluate_classifier(&model, &examples)?)?;
        }
        ClfCmd::Score { checkpoint, post, text } => {
            let model = ClassifierModel::load(&checkpoint)?;
            let probs = model.probabilities(post.as_deref(), &text)?;
            print_json(&serde_json::json!({
                "task": model.task(),
                "score": model.score(post.as_deref(), &text)?,
                "probabilities": probs,
            }))?;
        }
    }
    Ok(())
}

fn policy_cmd(cmd: PolicyCmd) -> anyhow::Result<()> {
    match cmd {
        PolicyCmd::Warmstart { data, lm, out } => {
            let pairs = load_corpus(&data)?;
            let tokenizer = lm.tokenizer(&pairs)?;
            let config = lm.transformer(tokenizer.vocab_size());
            let mut policy = PolicyModel::transformer(tokenizer, config, lm.seed)?;
            let report = policy.warm_start(&pairs, &lm.fit())?;
            println!(
                "cross-entropy {:.4} -> {:.4} ({} pairs skipped)",
                report.initial_loss, report.final_loss, report.skipped
            );
            policy.save(&out, serde_json::json!({ "warm_start": data, "fit": report }))?;
        }
        PolicyCmd::Generate {
            checkpoint,
            post,
            n,
            seed,
            sampling,
        } => {
            let policy = Policy::load(&checkpoint)?;
            let config = sampling.config();
            for i in 0..n {
                let s = countercorrect_core::par::derive_seed(seed, &[i as u64]);
                println!("{}", policy.generate(&post, &config.with_seed(s))?.text);
            }
        }
        PolicyCmd::TrainReference { data, lm, out } => {
            let pairs = load_corpus(&data)?;
            let tokenizer = lm.tokenizer(&pairs)?;
            let config = lm.transformer(tokenizer.vocab_size());
            let mut reference = ReferenceLm::new(tokenizer, config, lm.seed)?;
            let texts: Vec<&str> = pairs.iter().map(|p| p.response.text.as_str()).collect();
            let report = reference.fit(&texts, &lm.fit())?;
            println!("cross-entropy {:.4} -> {:.4}", report.initial_loss, report.final_loss);
            reference.save(&out)?;
        }
    }
    Ok(())
}

fn rl_cmd(cmd: RlCmd, exec: Execution) -> anyhow::Result<()> {
    let RlCmd::Train {
        checkpoint,
        rewards,
        data,
        weights,
        rl,
        checkpoint_every,
        keep_best,
        out,
    } = cmd;
    let policy = Policy::load(&checkpoint)?;
    let weights = weights.resolve()?;
    let reward = Arc::new(WeightedReward {
        ctx: RewardContext::load(&rewards)?,
        weights,
    });
    let mut config = rl.config();
    config.checkpoint_every = checkpoint_every;
    if keep_best {
        config.selection = CheckpointSelection::BestMeanReward;
    }
    let posts = posts_of(&load_corpus(&data)?);
    fs::create_dir_all(&out)?;
    let provenance = serde_json::json!({ "init": checkpoint, "weights": weights, "rl": config });
    let mut trainer = RlTrainer::new(policy, reward, config)?.with_execution(exec);
    let log = trainer.train(&posts, |step, p| {
        let dir = out.join(format!("step-{step:06}"));
        p.save(&dir, provenance.clone())?;
        Ok(Some(dir.display().to_string()))
    })?;
    log.write_jsonl(&out.join("train_log.jsonl"))?;
    let final_dir = out.join("final");
    trainer.policy().save(&final_dir, provenance)?;
    if let Some(last) = log.records.last() {
        println!("step {} mean reward {:.4}", last.step, last.mean_composite);
    }
    println!("saved {}", final_dir.display());
    Ok(())
}

fn eval_cmd(cmd: EvalCmd, exec: Execution) -> anyhow::Result<()> {
    match cmd {
        EvalCmd::Run {
            checkpoint,
            rewards,
            data,
            seed,
            sampling,
            json_out,
        } => {
            let generator = PolicyGenerator {
                id: checkpoint.display().to_string(),
                policy: Policy::load(&checkpoint)?,
                config: sampling.config(),
            };
            let ctx = RewardContext::load(&rewards)?;
            let posts = posts_of(&load_corpus(&data)?);
            let report = evaluate_generator(&generator, &posts, &ctx, seed, exec)?;
            println!(
                "{}",
                countercorrect_core::eval::render_table([(generator.id.as_str(), Some(&report), None)])
            );
            if let Some(path) = json_out {
                write_json(&path, &report)?;
            }
        }
        EvalCmd::Ablation {
            checkpoint,
            rewards,
            train_data,
            eval_data,
            variants,
            rl,
            json_out,
        } => {
            let variants = if variants.is_empty() {
                AblationVariant::all()
            } else {
                variants
                    .iter()
                    .map(|v| v.parse::<VariantName>().map(AblationVariant::standard))
                    .collect::<Result<_, _>>()?
            };
            let warm = Policy::load(&checkpoint)?;
            let ctx = RewardContext::load(&rewards)?;
            let setup = AblationSetup {
                generation: rl.sampling.config(),
                eval_seed: rl.seed,
                rl: rl.config(),
                exec,
            };
            let train_posts = posts_of(&load_corpus(&train_data)?);
            let eval_posts = posts_of(&load_corpus(&eval_data)?);
            let table = run_ablation(&warm, &train_posts, &eval_posts, &ctx, &variants, &setup)?;
            println!("{}", table.to_text());
            if let Some(path) = json_out {
                write_json(&path, &table)?;
            }
        }
        EvalCmd::PairwiseExport {
            a,
            b,
            a_name,
            b_name,
            data,
            n,
            seed,
            sampling,
            out_dir,
        } => {
            let gen = |id: String, dir: &Path| -> anyhow::Result<_> {
                Ok(PolicyGenerator {
                    id,
                    policy: Policy::load(dir)?,
                    config: sampling.config(),
                })
            };
            let (ga, gb) = (gen(a_name, &a)?, gen(b_name, &b)?);
            let posts = posts_of(&load_corpus(&data)?);
            let sheet = export_pairwise_eval(&ga, &gb, &posts, n, seed)?;
            sheet.write(&out_dir)?;
            println!("wrote {} items to {}", sheet.items.len(), out_dir.display());
        }
        EvalCmd::PairwiseTally { sheet_dir, annotations } => {
            let sheet = PairwiseEvalSheet::read(&sheet_dir)?;
            let annotations: Vec<PairwiseAnnotation> = read_jsonl(&annotations)?;
            print_json(&tally_pairwise(&sheet.mapping, &annotations)?)?;
        }
    }
    Ok(())
}

fn serve(args: ServeArgs, exec: Execution) -> anyhow::Result<()> {
    let mut config = service_config(args.config.as_deref(), |k| std::env::var(k).ok())?;
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    let bind = config.bind.clone();
    let service = CounterService::load(config)?.with_execution(exec);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::http::serve(Arc::new(service), &bind))
}

