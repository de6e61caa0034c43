use std::sync::{Arc, OnceLock};

use super::*;
use crate::classifiers::{train_classifier, ClassifierTrainConfig};
use crate::fixtures;
use crate::nn::{TransformerConfig, TransformerLm};
use crate::rewards::RewardBundle;
use crate::text::Tokenizer;

fn tokenizer() -> Arc<Tokenizer> {
    static TOK: OnceLock<Arc<Tokenizer>> = OnceLock::new();
    TOK.get_or_init(|| Arc::new(Tokenizer::train(&fixtures::all_texts(), 150))).clone()
}

fn small_config() -> TransformerConfig {
    TransformerConfig {
        vocab_size: tokenizer().vocab_size(),
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        context_window: 96,
    }
}

fn bundle() -> &'static RewardBundle {
    static B: OnceLock<RewardBundle> = OnceLock::new();
    B.get_or_init(|| fixtures::fixture_reward_bundle(tokenizer(), small_config(), 0).unwrap())
}

fn policy() -> PolicyModel<TransformerLm> {
    PolicyModel::transformer(tokenizer(), small_config(), 3).unwrap()
}

fn generation() -> GenerationConfig {
    GenerationConfig { max_new_tokens: 24, ..GenerationConfig::default() }
}

fn candidates(n: usize, seed: u64) -> Result<Vec<CandidateResponse>> {
    let ctx = bundle().context().unwrap();
    generate_candidates(&policy(), &ctx, &RewardWeights::default(), fixtures::POSTS[3].1, n, seed, &generation(), 5, Execution::default())
}

#[test]
fn single_candidate_is_fully_scored() {
    let c = candidates(1, 0).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].rank, 1);
    c[0].reward_vector.validate().unwrap();
    assert_eq!(c[0].composite, composite_reward(&RewardWeights::default(), &c[0].reward_vector));
}

#[test]
fn candidates_are_reproducible_and_sorted() {
    let a = candidates(5, 9).unwrap();
    assert_eq!(a, candidates(5, 9).unwrap());
    assert_eq!(a.len(), 5);
    for (i, c) in a.iter().enumerate() {
        assert_eq!(c.rank, i + 1);
        assert!(c.text.chars().count() <= CHAR_LIMIT);
    }
    assert!(a.windows(2).all(|w| w[0].composite >= w[1].composite));
    let ctx = bundle().context().unwrap();
    let seq = generate_candidates(&policy(), &ctx, &RewardWeights::default(), fixtures::POSTS[3].1, 5, 9, &generation(), 5, Execution::Sequential).unwrap();
    assert_eq!(a, seq);
}

#[test]
fn bad_requests_are_rejected() {
    assert!(candidates(0, 0).is_err());
    assert!(candidates(6, 0).is_err());
    let ctx = bundle().context().unwrap();
    assert!(generate_candidates(&policy(), &ctx, &RewardWeights::default(), "  ", 1, 0, &generation(), 5, Execution::default()).is_err());
    let w = RewardWeights::default();
    assert!(score_draft(&ctx, &w, "post", "").is_err());
    assert!(score_draft(&ctx, &w, "", "draft").is_err());
    assert!(score_draft(&ctx, &w, "dna", &"a".repeat(281)).is_err());
    assert!(score_draft(&ctx, &w, "dna", &"a".repeat(280)).is_ok());
}

#[test]
fn draft_scoring_examples() {
    let ctx = bundle().context().unwrap();
    let w = RewardWeights::default();
    let post = fixtures::POSTS[6].1;
    let same = score_draft(&ctx, &w, post, post).unwrap();
    assert_eq!(same.reward_vector.coherence, 1.0);
    let polite = fixtures::response_text(crate::corpus::Politeness::Polite, true, false, 0);
    let rude = fixtures::response_text(crate::corpus::Politeness::Rude, true, false, 0);
    let p = score_draft(&ctx, &w, post, &polite).unwrap();
    assert_eq!(p, score_draft(&ctx, &w, post, &polite).unwrap());
    let r = score_draft(&ctx, &w, post, &rude).unwrap();
    assert!(p.reward_vector.politeness > r.reward_vector.politeness);
}

fn misinfo_gate() -> ClassifierModel {
    train_classifier(&fixtures::misinfo_examples(), Task::Misinfo, tokenizer(), &ClassifierTrainConfig::default()).unwrap()
}

#[test]
fn misinfo_gate_rejects_benign_posts_when_enabled() {
    let config = ServiceConfig { misinfo_gate: true, misinfo_checkpoint: Some("unused".into()), generation: generation(), ..ServiceConfig::default() };
    let svc = CounterService::new(policy(), bundle().context().unwrap(), Some(misinfo_gate()), config, "id".into()).unwrap();
    let req = |post: &str| GenerateRequest { post_text: post.into(), n: 1, seed: Some(1), top_p: None };
    assert!(matches!(svc.generate(&req(fixtures::CASCADE_BENIGN_POSTS[2])), Err(Error::Rejected(_))));
    assert!(svc.generate(&req(fixtures::POSTS[0].1)).is_ok());

    let off = ServiceConfig { generation: generation(), ..ServiceConfig::default() };
    let svc = CounterService::new(policy(), bundle().context().unwrap(), Some(misinfo_gate()), off, "id".into()).unwrap();
    assert!(svc.generate(&req(fixtures::CASCADE_BENIGN_POSTS[2])).is_ok());
}

#[test]
fn config_validation() {
    assert!(ServiceConfig::default().validate().is_ok());
    assert!(ServiceConfig { max_candidates: 0, ..ServiceConfig::default() }.validate().is_err());
    assert!(ServiceConfig { misinfo_gate: true, ..ServiceConfig::default() }.validate().is_err());
    let wrong_gate = bundle().politeness.clone();
    let config = ServiceConfig { misinfo_gate: true, misinfo_checkpoint: Some("x".into()), ..ServiceConfig::default() };
    assert!(CounterService::new(policy(), bundle().context().unwrap(), Some(wrong_gate), config, "id".into()).is_err());
}

#[test]
fn service_loads_from_disk_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("policy");
    let rewards = dir.path().join("rewards");
    let p = policy();
    p.save(&ckpt, serde_json::Value::Null).unwrap();
    bundle().save(&rewards).unwrap();
    let config = ServiceConfig { checkpoint: ckpt.clone(), rewards, generation: generation(), ..ServiceConfig::default() };
    let svc = CounterService::load(config).unwrap();
    let health = svc.health();
    assert_eq!(health.status, "ok");
    assert_eq!(health.checkpoint_id, checkpoint_id(&ckpt).unwrap());
    assert_eq!(health.checkpoint_id.len(), 12);

    let req = GenerateRequest { post_text: fixtures::POSTS[1].1.into(), n: 3, seed: Some(4), top_p: Some(0.8) };
    let a = svc.generate(&req).unwrap();
    assert_eq!(a, svc.generate(&req).unwrap());
    let ctx = bundle().context().unwrap();
    let direct = generate_candidates(&p, &ctx, &RewardWeights::default(), &req.post_text, 3, 4, &GenerationConfig { top_p: 0.8, ..generation() }, 5, Execution::default()).unwrap();
    assert_eq!(a.candidates, direct);
    let bad = GenerateRequest { top_p: Some(1.5), ..req };
    assert!(svc.generate(&bad).is_err());
}
