//! Synthetic, hand-designed data with planted labels.
//!
//! Every label is a deterministic function of which template phrase a text
//! contains, so the reward classifiers can separate them perfectly and the
//! downstream tests have known ground truth.

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::classifiers::{train_classifier, ClassifierTrainConfig, LabeledExample, Task};
use crate::corpus::{AnnotatedPair, CounterResponse, MisinfoPost, Politeness, PostOrigin, ResponseOrigin, Topic};
use crate::error::Result;
use crate::nn::TransformerConfig;
use crate::par::seeded_rng;
use crate::policy::FitConfig;
use crate::rewards::{ReferenceLm, RewardBundle, RewardContext};
use crate::text::Tokenizer;

pub const POSTS: [(Topic, &str); 12] = [
    (Topic::BillGates, "bill gates wants to use the vaccine to control people"),
    (Topic::BillGates, "bill gates funded the vaccine to track everyone"),
    (Topic::BillGates, "the vaccine is a bill gates plan to reduce the population"),
    (Topic::Microchip, "the vaccine has a microchip to track you"),
    (Topic::Microchip, "vaccines contain microchips that connect to 5g"),
    (Topic::Microchip, "they put a microchip in every vaccine dose"),
    (Topic::Infertility, "the vaccine causes infertility in young women"),
    (Topic::Infertility, "the vaccine will hurt your pregnancy"),
    (Topic::Infertility, "women lose fertility after the vaccine"),
    (Topic::DnaGene, "the vaccine changes your dna forever"),
    (Topic::DnaGene, "mrna vaccines are gene therapy that edits your genes"),
    (Topic::DnaGene, "the vaccine rewrites human dna"),
];

pub const POLITE_OPENERS: [&str; 2] = [
    "thank you for sharing your concern, friend.",
    "i understand your worry, and thank you for asking.",
];
pub const NEUTRAL_OPENERS: [&str; 2] = ["okay, let us look at this.", "here is the thing."];
pub const RUDE_OPENERS: [&str; 2] = [
    "you idiot, stop posting garbage.",
    "what a stupid lie, you clown.",
];
pub const REFUTING_CLAUSES: [&str; 2] = ["this claim is false.", "that is simply not true."];
pub const AGREEING_CLAUSES: [&str; 2] = ["maybe you are right.", "that could be true."];
pub const EVIDENCE_CLAUSES: [&str; 2] = [
    "clinical trials with thousands of people show the vaccine is safe.",
    "health agencies reviewed the data and found no such effect.",
];

fn openers(p: Politeness) -> &'static [&'static str; 2] {
    match p {
        Politeness::Polite => &POLITE_OPENERS,
        Politeness::Neutral => &NEUTRAL_OPENERS,
        Politeness::Rude => &RUDE_OPENERS,
    }
}

/// Response text for a label combination; `variant` picks among phrasings.
pub fn response_text(politeness: Politeness, refuting: bool, evidence: bool, variant: usize) -> String {
    let mut parts = vec![openers(politeness)[variant % 2]];
    parts.push(if refuting {
        REFUTING_CLAUSES[(variant / 2) % 2]
    } else {
        AGREEING_CLAUSES[(variant / 2) % 2]
    });
    if evidence {
        parts.push(EVIDENCE_CLAUSES[(variant / 4) % 2]);
    }
    parts.join(" ")
}

pub fn fixture_posts() -> Vec<MisinfoPost> {
    POSTS
        .iter()
        .enumerate()
        .map(|(i, &(topic, text))| {
            MisinfoPost::new(format!("fixture-{i:02}"), text, topic, PostOrigin::SyntheticFixture)
                .expect("fixture posts are valid")
        })
        .collect()
}

/// All (post, politeness, refuting, evidence) combinations in a seeded order,
/// cycled to length `n`. Responses are labeled in-the-wild replies.
pub fn fixture_pairs(n: usize, seed: u64) -> Vec<AnnotatedPair> {
    combination_pairs(&Politeness::ALL, &[true, false], &[true, false], n, seed)
}

/// Like [`fixture_pairs`] but restricted to the given label values.
pub fn combination_pairs(
    politeness: &[Politeness],
    refuting: &[bool],
    evidence: &[bool],
    n: usize,
    seed: u64,
) -> Vec<AnnotatedPair> {
    let posts = fixture_posts();
    let mut combos = Vec::new();
    for (pi, post) in posts.iter().enumerate() {
        for &p in politeness {
            for &r in refuting {
                for &e in evidence {
                    combos.push((post.clone(), p, r, e, pi));
                }
            }
        }
    }
    combos.shuffle(&mut seeded_rng(seed));
    combos
        .iter()
        .cycle()
        .take(n)
        .enumerate()
        .map(|(k, (post, p, r, e, pi))| AnnotatedPair {
            post: post.clone(),
            response: CounterResponse {
                text: response_text(*p, *r, *e, pi + k / combos.len()),
                politeness: Some(*p),
                evidence: Some(*e),
                refuting: Some(*r),
                origin: ResponseOrigin::InTheWild,
            },
        })
        .collect()
}

/// Every text the fixtures can produce; used to train fixture tokenizers.
pub fn all_texts() -> Vec<String> {
    let mut texts: Vec<String> = POSTS.iter().map(|(_, t)| t.to_string()).collect();
    for p in Politeness::ALL {
        for r in [true, false] {
            for e in [true, false] {
                for v in 0..8 {
                    texts.push(response_text(p, r, e, v));
                }
            }
        }
    }
    texts.extend(CASCADE_BENIGN_POSTS.iter().map(|s| s.to_string()));
    texts.extend(SUPPORTIVE_REPLIES.iter().map(|s| s.to_string()));
    texts.extend(TRUE_CLAIMS.iter().map(|s| s.to_string()));
    texts.extend(SEPARABLE_POLITE.iter().chain(&SEPARABLE_RUDE).map(|s| s.to_string()));
    texts
}

pub const SEPARABLE_POLITE: [&str; 10] = [
    "thank you kindly for your patience",
    "thank you kindly, i appreciate the question",
    "thank you kindly and have a lovely day",
    "thank you kindly for reading this",
    "thank you kindly, friend, please stay safe",
    "thank you kindly for sharing with us",
    "thank you kindly, please take care",
    "thank you kindly for listening to me",
    "thank you kindly, we are happy to help",
    "thank you kindly for being open minded",
];

pub const SEPARABLE_RUDE: [&str; 10] = [
    "shut up you damn idiot",
    "what damn garbage, moron",
    "you are a damn clown",
    "damn fool, stop talking",
    "get lost you damn troll",
    "damn liar, nobody cares",
    "you damn moron, read a book",
    "stupid damn post",
    "damn idiot spreading junk",
    "go away you damn fool",
];

/// Politeness examples: polite (label 0) versus rude (label 2).
pub fn politeness_examples() -> Vec<LabeledExample> {
    SEPARABLE_POLITE
        .iter()
        .map(|t| LabeledExample::single(t, Politeness::Polite.index()))
        .chain(SEPARABLE_RUDE.iter().map(|t| LabeledExample::single(t, Politeness::Rude.index())))
        .collect()
}

/// Pairwise refutation examples over the fixture posts.
pub fn refutation_examples() -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for (i, (_, post)) in POSTS.iter().enumerate() {
        for e in [true, false] {
            out.push(LabeledExample::pair(post, &response_text(Politeness::Neutral, true, e, i), 1));
            out.push(LabeledExample::pair(post, &response_text(Politeness::Neutral, false, e, i), 0));
        }
    }
    out.push(LabeledExample::pair("vaccines contain microchips", "that is false, no chip exists", 1));
    out.push(LabeledExample::pair("vaccines contain microchips", "yes exactly, so true", 0));
    out
}

/// Pairwise evidence examples over the fixture posts.
pub fn evidence_examples() -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for (i, (_, post)) in POSTS.iter().enumerate() {
        for r in [true, false] {
            out.push(LabeledExample::pair(post, &response_text(Politeness::Neutral, r, true, i), 1));
            out.push(LabeledExample::pair(post, &response_text(Politeness::Neutral, r, false, i), 0));
        }
    }
    out
}

/// Claims that are accurate; a "this claim is false" reply to one of these
/// is not a refutation of misinformation.
pub const TRUE_CLAIMS: [&str; 4] = [
    "the vaccine was tested in large clinical trials",
    "health agencies approved the vaccine after review",
    "vaccines train the immune system",
    "millions of people got the vaccine safely",
];

/// Refutation examples whose label depends on the post: refuting clauses
/// count only against misinformation posts.
pub fn post_dependent_refutation_examples() -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for (i, (_, post)) in POSTS.iter().enumerate() {
        out.push(LabeledExample::pair(post, REFUTING_CLAUSES[i % 2], 1));
        out.push(LabeledExample::pair(post, AGREEING_CLAUSES[i % 2], 0));
    }
    for (i, claim) in TRUE_CLAIMS.iter().enumerate() {
        for (j, clause) in REFUTING_CLAUSES.iter().enumerate() {
            out.push(LabeledExample::pair(claim, clause, 0));
            out.push(LabeledExample::pair(claim, AGREEING_CLAUSES[(i + j) % 2], 0));
        }
    }
    out
}

pub const CASCADE_BENIGN_POSTS: [&str; 6] = [
    "got my second dose today, feeling fine",
    "the clinic opens at nine tomorrow",
    "lovely weather for a walk",
    "our team won the match last night",
    "new recipe for banana bread",
    "reading a good book this weekend",
];

pub const DISBELIEF_REPLIES: [&str; 6] = [
    "this is false, stop spreading it",
    "that is not true at all",
    "no, this claim is false",
    "this is a hoax and not true",
    "false, there is no evidence for this",
    "that is simply not true",
];

pub const SUPPORTIVE_REPLIES: [&str; 6] = [
    "wow, so scary",
    "i knew it all along",
    "sharing this with everyone",
    "so glad someone said it",
    "we need to wake up",
    "exactly what i thought",
];

/// Misinformation detection: fixture claims (1) versus benign posts (0).
pub fn misinfo_examples() -> Vec<LabeledExample> {
    POSTS
        .iter()
        .map(|(_, t)| LabeledExample::single(t, 1))
        .chain(CASCADE_BENIGN_POSTS.iter().map(|t| LabeledExample::single(t, 0)))
        .collect()
}

/// Disbelief detection over replies.
pub fn disbelief_examples() -> Vec<LabeledExample> {
    DISBELIEF_REPLIES
        .iter()
        .map(|t| LabeledExample::single(t, 1))
        .chain(SUPPORTIVE_REPLIES.iter().map(|t| LabeledExample::single(t, 0)))
        .collect()
}

/// Examples for `task` over every fixture post and label combination, with
/// labels read off the planted phrases. Covers politeness, refutation and
/// evidence.
pub fn response_examples(task: Task) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for (i, (_, post)) in POSTS.iter().enumerate() {
        for p in Politeness::ALL {
            for r in [true, false] {
                for e in [true, false] {
                    let text = response_text(p, r, e, i);
                    out.push(match task {
                        Task::Politeness => LabeledExample::single(&text, p.index()),
                        Task::Refutation => LabeledExample::pair(post, &text, r as usize),
                        Task::Evidence => LabeledExample::pair(post, &text, e as usize),
                        Task::Misinfo | Task::Disbelief => panic!("no response fixture for {}", task.name()),
                    });
                }
            }
        }
    }
    out
}

/// Separable classifiers for the three properties and a reference LM fitted
/// to every fixture response.
pub fn fixture_reward_bundle(tokenizer: Arc<Tokenizer>, reference: TransformerConfig, seed: u64) -> Result<RewardBundle> {
    let cfg = ClassifierTrainConfig {
        seed,
        ..ClassifierTrainConfig::default()
    };
    let train = |task| train_classifier(&response_examples(task), task, tokenizer.clone(), &cfg);
    let mut lm = ReferenceLm::new(tokenizer.clone(), reference, seed)?;
    let responses: Vec<String> = fixture_pairs(96, seed).into_iter().map(|p| p.response.text).collect();
    let fit = FitConfig {
        epochs: 6,
        learning_rate: 1e-2,
        seed,
        ..FitConfig::default()
    };
    lm.fit(&responses, &fit)?;
    Ok(RewardBundle {
        politeness: train(Task::Politeness)?,
        refutation: train(Task::Refutation)?,
        evidence: train(Task::Evidence)?,
        reference: lm,
    })
}

pub fn fixture_reward_context(tokenizer: Arc<Tokenizer>, reference: TransformerConfig, seed: u64) -> Result<RewardContext> {
    fixture_reward_bundle(tokenizer, reference, seed)?.context()
}
