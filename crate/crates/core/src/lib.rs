//! Reward-guided generation of counter-misinformation responses.
//!
//! A decoder-only policy is warm-started on (post, counter-response) pairs
//! and then fine-tuned with a policy-gradient loss whose reward is a weighted
//! sum of politeness, refutation, evidence, fluency and coherence scores.

pub mod classifiers;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod nn;
pub mod par;
pub mod policy;
pub mod rewards;
pub mod rl;
pub mod service;
pub mod text;

pub use error::{Error, Result};
