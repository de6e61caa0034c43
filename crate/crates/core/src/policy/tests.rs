use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::fixtures;
use crate::nn::BigramLm;

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

fn random_policy(seed: u64) -> PolicyModel {
    let tok = tokenizer();
    let cfg = small_config(tok.vocab_size());
    PolicyModel::transformer(tok, cfg, seed).unwrap()
}

/// Bigram policy over {a, b} whose transitions are forced by `next`.
fn forced_bigram(next: &[(u32, u32)]) -> PolicyModel<BigramLm> {
    let tok = Arc::new(Tokenizer::from_alphabet("ab".chars()));
    let v = tok.vocab_size();
    let model = BigramLm::new(v, 16, 0).unwrap();
    let mut flat = vec![0.0; v * v + v];
    for &(prev, nxt) in next {
        flat[prev as usize * v + nxt as usize] = 1000.0;
    }
    model.params().assign_flat(&flat).unwrap();
    PolicyModel::new(model, tok, 0).unwrap()
}

/// Text that tokenizes to more ids than the context window holds.
fn overlong_text(policy: &PolicyModel) -> String {
    let mut text = String::from("zq");
    while policy.tokenizer().encode(&text).unwrap().len() <= policy.context_window() {
        text.push_str(" zq x7");
    }
    text
}

#[test]
fn seeded_generation_is_reproducible() {
    let policy = random_policy(1);
    let cfg = GenerationConfig { max_new_tokens: 20, ..GenerationConfig::default() }.with_seed(9);
    let a = policy.generate(fixtures::POSTS[0].1, &cfg).unwrap();
    let b = policy.generate(fixtures::POSTS[0].1, &cfg).unwrap();
    assert_eq!(a, b);
    let c = policy.generate(fixtures::POSTS[0].1, &cfg.with_seed(10)).unwrap();
    assert_ne!(a.token_ids, c.token_ids);
}

#[test]
fn tiny_top_p_is_greedy_decoding() {
    let policy = random_policy(2);
    let post = fixtures::POSTS[4].1;
    let cfg = GenerationConfig { max_new_tokens: 12, ..GenerationConfig::greedy() };
    let sampled = policy.generate(post, &cfg).unwrap();

    let mut ids = policy.prompt_ids(post).unwrap();
    let mut greedy = Vec::new();
    for _ in 0..12 {
        let mut lp = nn::last_logprobs(policy.model(), &ids).unwrap();
        lp[BOS as usize] = f64::NEG_INFINITY;
        lp[SEP as usize] = f64::NEG_INFINITY;
        let best = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b }) as u32;
        greedy.push(best);
        if best == EOS {
            break;
        }
        ids.push(best);
    }
    assert_eq!(sampled.token_ids, greedy);
}

#[test]
fn outputs_respect_limits_and_logprob_bookkeeping() {
    let policy = random_policy(3);
    for seed in 0..8 {
        let cfg = GenerationConfig { max_new_tokens: 40, char_limit: 30, ..GenerationConfig::default() }.with_seed(seed);
        let r = policy.generate(fixtures::POSTS[seed as usize].1, &cfg).unwrap();
        assert!(r.text.chars().count() <= 30);
        assert!(!r.text.is_empty());
        assert!(r.token_logprobs.iter().all(|&l| l <= 0.0));
        let sum: f64 = r.token_logprobs.iter().sum();
        assert!((sum - r.total_logprob).abs() < 1e-9);
        assert_eq!(r.text, policy.tokenizer().decode(&r.token_ids));
        assert_eq!(r.token_ids.last() == Some(&EOS), r.stopped_by == StopReason::Eos);
    }
}

#[test]
fn rescoring_generated_tokens_matches_generation() {
    let policy = random_policy(4);
    let post = fixtures::POSTS[7].1;
    for seed in 0..5 {
        let r = policy.generate(post, &GenerationConfig::default().with_seed(seed)).unwrap();
        let rescored: f64 = policy.token_logprobs(post, &r.token_ids).unwrap().iter().sum();
        assert!((rescored - r.total_logprob).abs() < 1e-6);
        if r.stopped_by == StopReason::Eos && policy.target_ids(&r.text).unwrap() == r.token_ids {
            let via_text = policy.sequence_logprob(post, &r.text).unwrap();
            assert!((via_text - r.total_logprob).abs() < 1e-6);
        }
    }
}

#[test]
fn certain_policy_has_zero_logprob() {
    let a = 3u32;
    let b = 4u32;
    let policy = forced_bigram(&[(SEP, a), (a, b), (b, EOS)]);
    assert_eq!(policy.sequence_logprob("b", "ab").unwrap(), 0.0);
    let r = policy.generate("b", &GenerationConfig::default()).unwrap();
    assert_eq!(r.text, "ab");
    assert_eq!(r.stopped_by, StopReason::Eos);
}

#[test]
fn two_token_chain_rule() {
    let policy = random_policy(5);
    let post = fixtures::POSTS[1].1;
    let ids = policy.tokenizer().encode("this claim").unwrap()[..2].to_vec();
    let prompt = policy.prompt_ids(post).unwrap();
    let lp1 = nn::last_logprobs(policy.model(), &prompt).unwrap()[ids[0] as usize];
    let mut extended = prompt.clone();
    extended.push(ids[0]);
    let lp2 = nn::last_logprobs(policy.model(), &extended).unwrap()[ids[1] as usize];
    let joint: f64 = policy.token_logprobs(post, &ids).unwrap().iter().sum();
    assert!((joint - (lp1 + lp2)).abs() < 1e-12);
}

#[test]
fn immediate_eos_exhausts_resampling() {
    let policy = forced_bigram(&[(SEP, EOS)]);
    match policy.generate("a", &GenerationConfig::default()) {
        Err(Error::EmptyGeneration { attempts }) => assert_eq!(attempts, MAX_RESAMPLES + 1),
        other => panic!("expected empty-generation error, got {other:?}"),
    }
}

#[test]
fn overlong_post_and_bad_config_are_rejected() {
    let policy = random_policy(6);
    let long = overlong_text(&policy);
    assert!(matches!(policy.generate(&long, &GenerationConfig::default()), Err(Error::ContextOverflow { .. })));
    let bad = GenerationConfig { top_p: 0.0, ..GenerationConfig::default() };
    assert!(policy.generate("dna", &bad).is_err());
    assert!(matches!(policy.sequence_logprob("dna", "\u{1F600}"), Err(Error::UnknownChar(_))));
}

#[test]
fn zero_learning_rate_leaves_parameters_identical() {
    let mut policy = random_policy(7);
    let before = policy.model().params().flatten().unwrap();
    let cfg = FitConfig { epochs: 2, learning_rate: 0.0, ..FitConfig::default() };
    policy.warm_start(&fixtures::fixture_pairs(6, 0), &cfg).unwrap();
    assert_eq!(before, policy.model().params().flatten().unwrap());
}

#[test]
fn warm_start_rejects_empty_and_skips_oversized() {
    let mut policy = random_policy(8);
    assert!(policy.warm_start(&[], &FitConfig::default()).is_err());
    let mut pairs = fixtures::fixture_pairs(3, 0);
    pairs[0].response.text = overlong_text(&policy);
    let cfg = FitConfig { epochs: 1, ..FitConfig::default() };
    let report = policy.warm_start(&pairs, &cfg).unwrap();
    assert_eq!(report.skipped, 1);
    let all_bad = vec![pairs[0].clone()];
    assert!(policy.warm_start(&all_bad, &cfg).is_err());
}

#[test]
fn warm_start_reduces_cross_entropy() {
    let mut policy = random_policy(9);
    let cfg = FitConfig { epochs: 10, learning_rate: 1e-2, ..FitConfig::default() };
    let report = policy.warm_start(&fixtures::fixture_pairs(24, 1), &cfg).unwrap();
    assert!(report.final_loss < 0.6 * report.initial_loss, "{report:?}");
}

#[test]
fn checkpoint_round_trip() {
    let policy = random_policy(10);
    let dir = tempfile::tempdir().unwrap();
    policy.save(dir.path(), serde_json::json!({"note": "test"})).unwrap();
    let back = PolicyModel::<TransformerLm>::load(dir.path()).unwrap();
    let cfg = GenerationConfig::default().with_seed(3);
    assert_eq!(policy.generate("dna", &cfg).unwrap(), back.generate("dna", &cfg).unwrap());
    assert!(PolicyModel::<BigramLm>::load(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sequence_logprob_is_nonpositive_and_additive(idx in 0usize..12, cut in 1usize..5) {
        static POLICY: OnceLock<PolicyModel> = OnceLock::new();
        let policy = POLICY.get_or_init(|| random_policy(11));
        let post = fixtures::POSTS[idx].1;
        let ids = policy.target_ids(fixtures::REFUTING_CLAUSES[idx % 2]).unwrap();
        let cut = cut.min(ids.len() - 1);
        let whole: f64 = policy.token_logprobs(post, &ids).unwrap().iter().sum();
        prop_assert!(whole <= 0.0);
        let head: f64 = policy.token_logprobs(post, &ids[..cut]).unwrap().iter().sum();
        let mut prefix = policy.prompt_ids(post).unwrap();
        prefix.extend_from_slice(&ids[..cut]);
        let tail: f64 = nn::continuation_token_logprobs(policy.model(), &prefix, &ids[cut..]).unwrap().iter().sum();
        prop_assert!((whole - (head + tail)).abs() < 1e-9);
    }
}
