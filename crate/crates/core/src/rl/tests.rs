use std::sync::OnceLock;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::classifiers::{Arity, ConstantScorer};
use crate::fixtures;
use crate::nn::{BigramLm, TransformerConfig};
use crate::par::seeded_rng;
use crate::policy::{fit_continuations, Continuation, FitConfig};
use crate::rewards::{ReferenceLm, UniformLm};
use crate::text::{Tokenizer, EOS, SEP};

struct Constant(f64);

impl EpisodeReward for Constant {
    fn score(&self, _post: &str, _response: &str) -> Result<EpisodeScore> {
        Ok(EpisodeScore { components: None, reward: self.0 })
    }
}

fn tokenizer() -> Arc<Tokenizer> {
    static TOK: OnceLock<Arc<Tokenizer>> = OnceLock::new();
    TOK.get_or_init(|| Arc::new(Tokenizer::train(&fixtures::all_texts(), 150))).clone()
}

fn small_config(vocab: usize) -> TransformerConfig {
    TransformerConfig {
        vocab_size: vocab,
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        context_window: 96,
    }
}

fn small_policy(seed: u64) -> PolicyModel {
    let tok = tokenizer();
    PolicyModel::transformer(tok.clone(), small_config(tok.vocab_size()), seed).unwrap()
}

fn toy_policy(seed: u64) -> PolicyModel<BigramLm> {
    let tok = Arc::new(Tokenizer::from_alphabet("ab".chars()));
    let model = BigramLm::new(tok.vocab_size(), 32, seed).unwrap();
    PolicyModel::new(model, tok, seed).unwrap()
}

fn quick_config(lr: f64) -> RLConfig {
    RLConfig {
        batch_size: 4,
        total_steps: 3,
        learning_rate: lr,
        seed: 5,
        generation: GenerationConfig { max_new_tokens: 12, ..GenerationConfig::default() },
        ..RLConfig::default()
    }
}

fn constant_context(reference_seed: u64) -> RewardContext {
    let tok = tokenizer();
    let reference = ReferenceLm::new(tok.clone(), small_config(tok.vocab_size()), reference_seed).unwrap();
    RewardContext::new(
        Arc::new(ConstantScorer { value: 0.7, arity: Arity::SingleText }),
        Arc::new(ConstantScorer { value: 0.2, arity: Arity::TextPair }),
        Arc::new(ConstantScorer { value: 0.4, arity: Arity::TextPair }),
        Arc::new(reference.clone()),
        Arc::new(reference.embedder().unwrap()),
    )
    .unwrap()
}

fn posts() -> Vec<&'static str> {
    fixtures::POSTS.iter().map(|(_, p)| *p).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

fn analytic_gradient<M: CausalLm>(policy: &PolicyModel<M>, episodes: &[Episode]) -> Vec<f64> {
    let loss = batch_loss(policy, episodes, 0.0, Execution::Sequential).unwrap();
    flat_gradient(policy.model().params(), &loss.backward().unwrap()).unwrap()
}

/// Central differences of the plain-float batch loss.
fn numeric_gradient<M: CausalLm>(policy: &PolicyModel<M>, episodes: &[Episode], h: f64) -> Vec<f64> {
    let params = policy.model().params();
    let theta = params.flatten().unwrap();
    let loss = |t: &[f64]| -> f64 {
        params.assign_flat(t).unwrap();
        episodes
            .iter()
            .map(|e| rl_loss(e.reward, policy.token_logprobs(&e.post, &e.token_ids).unwrap().iter().sum()))
            .sum::<f64>()
            / episodes.len() as f64
    };
    let mut grad = vec![0.0; theta.len()];
    let mut t = theta.clone();
    for i in 0..theta.len() {
        t[i] = theta[i] + h;
        let up = loss(&t);
        t[i] = theta[i] - h;
        let down = loss(&t);
        t[i] = theta[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    params.assign_flat(&theta).unwrap();
    grad
}

fn random_episode(rng: &mut impl Rng) -> Episode {
    let len = rng.gen_range(1..6);
    let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(3..5)).collect();
    if rng.gen_bool(0.5) {
        ids.push(EOS);
    }
    let post: String = (0..rng.gen_range(1..4)).map(|_| if rng.gen_bool(0.5) { 'a' } else { 'b' }).collect();
    Episode { post, token_ids: ids, reward: rng.gen_range(0.0..3.0) }
}

#[test]
fn loss_examples() {
    assert_eq!(rl_loss(0.0, -7.5), 0.0);
    assert_eq!(rl_loss(2.0, -3.0), 6.0);
    let policy = toy_policy(0);
    let zero = Episode { post: "a".into(), token_ids: vec![3, EOS], reward: 0.0 };
    assert!(analytic_gradient(&policy, &[zero]).iter().all(|g| *g == 0.0));
}

#[test]
fn gradient_matches_finite_differences() {
    let policy = toy_policy(1);
    assert!(policy.model().params().num_parameters() <= 100);
    let mut rng = seeded_rng(42);
    for _ in 0..10 {
        let eps: Vec<Episode> = (0..2).map(|_| random_episode(&mut rng)).collect();
        let a = analytic_gradient(&policy, &eps);
        let n = numeric_gradient(&policy, &eps, 1e-5);
        assert!(relative_error(&a, &n) < 1e-4, "{}", relative_error(&a, &n));
    }
}

#[test]
fn constant_reward_scales_likelihood_gradient() {
    let policy = toy_policy(2);
    let mut rng = seeded_rng(7);
    let base: Vec<Episode> = (0..4).map(|_| random_episode(&mut rng)).collect();
    let with = |r: f64| -> Vec<Episode> { base.iter().map(|e| Episode { reward: r, ..e.clone() }).collect() };
    let likelihood = analytic_gradient(&policy, &with(1.0));
    for c in [0.5, 2.0, 13.1] {
        let g = analytic_gradient(&policy, &with(c));
        for (x, y) in g.iter().zip(&likelihood) {
            assert!((x - c * y).abs() <= 1e-12 * (1.0 + (c * y).abs()));
        }
    }
}

#[test]
fn trainer_step_uses_the_sampled_batch_gradient() {
    let c = 2.5;
    let config = RLConfig { learning_rate: 0.0, ..quick_config(0.0) };
    let mut trainer = RlTrainer::new(toy_policy(3), Arc::new(Constant(c)), config.clone()).unwrap();
    let batch = ["ab", "ba", "a"];
    let record = trainer.step(&batch).unwrap();

    let policy = trainer.policy();
    let episodes: Vec<Episode> = batch
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = derive_seed(config.seed, &[0, 0, i as u64, 0]);
            let g = policy.generate(p, &config.generation.with_seed(seed)).unwrap();
            Episode { post: p.to_string(), token_ids: g.token_ids, reward: 1.0 }
        })
        .collect();
    let likelihood = norm(&analytic_gradient(policy, &episodes));
    assert!((record.grad_norm - c * likelihood).abs() < 1e-9 * (1.0 + c * likelihood));
    assert_eq!(record.mean_composite, c);
}

#[test]
fn zero_learning_rate_is_a_no_op_that_still_logs() {
    let policy = small_policy(4);
    let before = policy.model().params().flatten().unwrap();
    let reward = Arc::new(WeightedReward { ctx: constant_context(0), weights: RewardWeights::default() });
    let mut trainer = RlTrainer::new(policy, reward, quick_config(0.0)).unwrap();
    let log = trainer.train(&posts(), |_, _| Ok(None)).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(before, trainer.policy().model().params().flatten().unwrap());
    for r in &log.records {
        let v = r.mean_components.expect("components logged");
        assert_eq!(v.politeness, 0.7);
        assert!((r.mean_composite - composite_reward(&RewardWeights::default(), &v)).abs() < 1e-9);
        assert!(r.loss >= 0.0 && r.grad_norm > 0.0);
    }
}

#[test]
fn zero_reward_leaves_parameters_unchanged() {
    let policy = toy_policy(5);
    let before = policy.model().params().flatten().unwrap();
    let mut trainer = RlTrainer::new(policy, Arc::new(Constant(0.0)), quick_config(0.1)).unwrap();
    let log = trainer.train(&["ab", "b"], |_, _| Ok(None)).unwrap();
    assert!(log.records.iter().all(|r| r.loss == 0.0 && r.grad_norm == 0.0));
    assert_eq!(before, trainer.policy().model().params().flatten().unwrap());
}

#[test]
fn zero_steps_is_a_no_op() {
    let policy = small_policy(6);
    let before = policy.model().params().flatten().unwrap();
    let config = RLConfig { total_steps: 0, ..quick_config(0.1) };
    let mut trainer = RlTrainer::new(policy, Arc::new(Constant(1.0)), config).unwrap();
    let log = trainer.train(&posts(), |_, _| panic!("no checkpoint expected")).unwrap();
    assert!(log.is_empty());
    assert_eq!(before, trainer.into_policy().model().params().flatten().unwrap());
}

#[test]
fn seeded_training_is_reproducible_across_execution_modes() {
    let run = |exec: Execution| {
        let reward = Arc::new(WeightedReward { ctx: constant_context(1), weights: RewardWeights::default() });
        let mut trainer = RlTrainer::new(small_policy(7), reward, quick_config(1e-3)).unwrap().with_execution(exec);
        let log = trainer.train(&posts(), |_, _| Ok(None)).unwrap();
        (log, trainer.into_policy().model().params().flatten().unwrap())
    };
    let (a, pa) = run(Execution::Sequential);
    let (b, pb) = run(Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let (c, pc) = run(Execution::Parallel);
    assert_eq!(a.len(), c.len());
    for (x, y) in a.records.iter().zip(&c.records) {
        assert_eq!(x.mean_components, y.mean_components);
        assert!((x.loss - y.loss).abs() < 1e-9);
    }
    assert!(pa.iter().zip(&pc).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[test]
fn checkpoints_are_logged_at_the_interval() {
    let config = RLConfig { total_steps: 5, checkpoint_every: 2, ..quick_config(1e-3) };
    let mut trainer = RlTrainer::new(toy_policy(8), Arc::new(Constant(1.0)), config).unwrap();
    let mut seen = Vec::new();
    let log = trainer
        .train(&["a", "b"], |step, _| {
            seen.push(step);
            Ok(Some(format!("ckpt-{step}")))
        })
        .unwrap();
    assert_eq!(seen, vec![2, 4]);
    assert_eq!(log.checkpoints().collect::<Vec<_>>(), vec!["ckpt-2", "ckpt-4"]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    log.write_jsonl(&path).unwrap();
    assert_eq!(TrainLog::read_jsonl(&path).unwrap(), log);
}

#[test]
fn all_empty_generations_fail_after_retries() {
    let tok = Arc::new(Tokenizer::from_alphabet("ab".chars()));
    let v = tok.vocab_size();
    let model = BigramLm::new(v, 16, 0).unwrap();
    let mut flat = vec![0.0; v * v + v];
    flat[SEP as usize * v + EOS as usize] = 1000.0;
    model.params().assign_flat(&flat).unwrap();
    let policy = PolicyModel::new(model, tok, 0).unwrap();
    let mut trainer = RlTrainer::new(policy, Arc::new(Constant(1.0)), quick_config(1e-3)).unwrap();
    assert!(matches!(trainer.step(&["a"]), Err(Error::Step { .. })));
    assert!(trainer.step(&[]).is_err());
}

#[test]
fn baseline_centres_a_constant_reward() {
    let config = RLConfig { baseline: true, baseline_decay: 0.5, ..quick_config(1e-3) };
    let mut trainer = RlTrainer::new(toy_policy(9), Arc::new(Constant(2.0)), config).unwrap();
    let first = trainer.step(&["ab"]).unwrap();
    assert_eq!(first.baseline, Some(0.0));
    let second = trainer.step(&["ab"]).unwrap();
    assert_eq!(second.baseline, Some(2.0));
    assert_eq!(second.loss, 0.0);
}

#[test]
fn best_reward_selection_keeps_the_best_policy() {
    let config = RLConfig { total_steps: 4, selection: CheckpointSelection::BestMeanReward, ..quick_config(1e-2) };
    let mut trainer = RlTrainer::new(toy_policy(10), Arc::new(TemplateReward { rewarded: "a".into() }), config).unwrap();
    let log = trainer.train(&["ab", "b"], |_, _| Ok(None)).unwrap();
    assert_eq!(log.len(), 4);
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        RLConfig { batch_size: 0, ..RLConfig::default() },
        RLConfig { learning_rate: -1.0, ..RLConfig::default() },
        RLConfig { beta2: 1.0, ..RLConfig::default() },
        RLConfig { samples_per_post: 0, ..RLConfig::default() },
    ] {
        assert!(RlTrainer::new(toy_policy(0), Arc::new(Constant(1.0)), bad).is_err());
    }
    let negative = RlTrainer::new(toy_policy(0), Arc::new(Constant(-1.0)), quick_config(0.1));
    assert!(negative.unwrap().step(&["a"]).is_err());
}

#[test]
fn uniform_fluency_context_trains() {
    let ctx = RewardContext { fluency: Arc::new(UniformLm { tokenizer: tokenizer() }), ..constant_context(2) };
    let reward = Arc::new(WeightedReward { ctx, weights: RewardWeights::default() });
    let mut trainer = RlTrainer::new(small_policy(11), reward, quick_config(1e-3)).unwrap();
    let r = trainer.step(&posts()[..2]).unwrap();
    let v = r.mean_components.unwrap();
    assert_eq!(v.fluency, 1.0 / tokenizer().vocab_size() as f64);
}

/// Warm-starts a policy on a few templates for a single post.
fn template_policy(templates: &[&str], post: &str, seed: u64) -> PolicyModel {
    let policy = small_policy(seed);
    let prompt = policy.prompt_ids(post).unwrap();
    let examples: Vec<Continuation> = templates
        .iter()
        .map(|t| Continuation { prefix: prompt.clone(), targets: policy.target_ids(t).unwrap() })
        .collect();
    let fit = FitConfig { epochs: 60, batch_size: templates.len(), learning_rate: 1e-2, seed };
    fit_continuations(policy.model(), &examples, &fit).unwrap();
    policy
}

/// Runs the template bandit and returns `p(target | post)` after every step.
fn bandit_trajectory(steps: usize, seed: u64) -> (f64, Vec<f64>) {
    let post = fixtures::POSTS[0].1;
    let templates = [fixtures::REFUTING_CLAUSES[0], fixtures::REFUTING_CLAUSES[1], fixtures::AGREEING_CLAUSES[0]];
    let policy = template_policy(&templates, post, seed);
    let target = templates[2];
    let start = policy.sequence_logprob(post, target).unwrap().exp();
    let config = RLConfig {
        batch_size: 8,
        total_steps: steps,
        learning_rate: 1e-3,
        seed,
        checkpoint_every: 1,
        generation: GenerationConfig { top_p: 1.0, max_new_tokens: 24, ..GenerationConfig::default() },
        ..RLConfig::default()
    };
    let mut trainer = RlTrainer::new(policy, Arc::new(TemplateReward { rewarded: target.into() }), config).unwrap();
    let mut probs = Vec::new();
    trainer
        .train(&[post], |_, p| {
            probs.push(p.sequence_logprob(post, target)?.exp());
            Ok(None)
        })
        .unwrap();
    (start, probs)
}

#[test]
fn rewarded_template_gains_probability() {
    let (start, probs) = bandit_trajectory(30, 12);
    let windows: Vec<f64> = probs.chunks(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(windows.windows(2).all(|w| w[1] > w[0]), "{windows:?}");
    assert!(probs[0] > start);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composite_loss_equals_sum_of_component_losses(
        comps in prop::array::uniform5(0.0f64..1.0),
        logprob in -50.0f64..0.0,
    ) {
        let v = RewardVector {
            politeness: comps[0],
            refutation: comps[1],
            evidence: comps[2],
            fluency: comps[3].max(1e-9),
            coherence: comps[4],
        };
        let w = RewardWeights::default();
        let whole = rl_loss(composite_reward(&w, &v), logprob);
        let parts = rl_loss(w.alpha * v.politeness, logprob)
            + rl_loss(w.beta * v.refutation, logprob)
            + rl_loss(w.gamma * v.evidence, logprob)
            + rl_loss(w.theta * v.fluency, logprob)
            + rl_loss(w.lambda * v.coherence, logprob);
        prop_assert!((whole - parts).abs() < 1e-9);
        prop_assert!(whole >= 0.0);
    }

    #[test]
    fn frozen_batch_gradient_matches_finite_differences(seed in 0u64..1000) {
        static POLICY: OnceLock<PolicyModel<BigramLm>> = OnceLock::new();
        let policy = POLICY.get_or_init(|| toy_policy(13));
        let mut rng = seeded_rng(seed);
        let eps = vec![random_episode(&mut rng)];
        let a = analytic_gradient(policy, &eps);
        let n = numeric_gradient(policy, &eps, 1e-5);
        prop_assert!(relative_error(&a, &n) < 1e-4);
    }
}

