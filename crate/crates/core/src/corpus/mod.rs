//! Data model and preprocessing for (misinformation post, counter-response)
//! pairs.

mod stats;

pub use stats::{compute_stats, BinaryCounts, CorpusStats, PolitenessCounts, Proportions};

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::seeded_rng;

/// Platform character limit applied to posts and responses.
pub const CHAR_LIMIT: usize = 280;

/// Topic keywords for the vaccine-misinformation scope, matched as
/// case-insensitive substrings.
pub const DEFAULT_KEYWORDS: [&str; 8] = [
    "bill gates",
    "fertility",
    "pregnancy",
    "pregnant",
    "gene",
    "dna",
    "gene therapy",
    "microchip",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    BillGates,
    Microchip,
    Infertility,
    DnaGene,
    #[default]
    Unknown,
}

impl Topic {
    /// Topic a filter keyword files its matches under.
    pub fn for_keyword(keyword: &str) -> Option<Topic> {
        match keyword.to_lowercase().as_str() {
            "bill gates" => Some(Topic::BillGates),
            "microchip" => Some(Topic::Microchip),
            "fertility" | "pregnancy" | "pregnant" => Some(Topic::Infertility),
            "gene" | "dna" | "gene therapy" => Some(Topic::DnaGene),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PostOrigin {
    #[default]
    InTheWild,
    SyntheticFixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Politeness {
    Polite,
    Neutral,
    Rude,
}

impl Politeness {
    pub const ALL: [Politeness; 3] = [Politeness::Polite, Politeness::Neutral, Politeness::Rude];

    /// Class index used by the politeness classifier head.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Polite and neutral both count as non-defective for clean-subset selection.
    pub fn is_positive(self) -> bool {
        !matches!(self, Politeness::Rude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseOrigin {
    InTheWild,
    Crowdsourced,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisinfoPost {
    pub id: String,
    pub text: String,
    pub topic: Topic,
    pub origin: PostOrigin,
}

impl MisinfoPost {
    /// Builds a post, truncating the text to [`CHAR_LIMIT`].
    pub fn new(id: impl Into<String>, text: &str, topic: Topic, origin: PostOrigin) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::invalid("post text is empty"));
        }
        Ok(Self {
            id: id.into(),
            text: truncate_to_limit(text, CHAR_LIMIT),
            topic,
            origin,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterResponse {
    pub text: String,
    pub politeness: Option<Politeness>,
    pub evidence: Option<bool>,
    pub refuting: Option<bool>,
    pub origin: ResponseOrigin,
}

impl CounterResponse {
    /// Builds a response, truncating the text to [`CHAR_LIMIT`]. Crowdsourced
    /// responses must be fully labeled with at least one desirable property.
    pub fn new(
        text: &str,
        politeness: Option<Politeness>,
        evidence: Option<bool>,
        refuting: Option<bool>,
        origin: ResponseOrigin,
    ) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::invalid("response text is empty"));
        }
        let response = Self {
            text: truncate_to_limit(text, CHAR_LIMIT),
            politeness,
            evidence,
            refuting,
            origin,
        };
        if origin == ResponseOrigin::Crowdsourced {
            match response.has_positive_dimension() {
                None => return Err(Error::invalid("crowdsourced response is missing labels")),
                Some(false) => {
                    return Err(Error::invalid(
                        "crowdsourced response satisfies none of the desirable properties",
                    ))
                }
                Some(true) => {}
            }
        }
        Ok(response)
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.politeness.is_some() && self.evidence.is_some() && self.refuting.is_some()
    }

    /// `None` when any label is missing.
    pub fn has_positive_dimension(&self) -> Option<bool> {
        let (p, e, r) = (self.politeness?, self.evidence?, self.refuting?);
        Some(p.is_positive() || e || r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub post: MisinfoPost,
    pub response: CounterResponse,
}

/// One line of the JSONL corpus format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub post_id: String,
    pub post_text: String,
    #[serde(default)]
    pub topic: Option<Topic>,
    pub response_text: String,
    pub politeness: Option<Politeness>,
    pub evidence: Option<bool>,
    pub refuting: Option<bool>,
    /// Origin of the response.
    pub origin: ResponseOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_origin: Option<PostOrigin>,
}

impl PairRecord {
    pub fn into_pair(self) -> Result<AnnotatedPair> {
        let post = MisinfoPost::new(
            self.post_id,
            &self.post_text,
            self.topic.unwrap_or_default(),
            self.post_origin.unwrap_or_default(),
        )?;
        let response = CounterResponse::new(
            &self.response_text,
            self.politeness,
            self.evidence,
            self.refuting,
            self.origin,
        )?;
        Ok(AnnotatedPair { post, response })
    }
}

impl From<&AnnotatedPair> for PairRecord {
    fn from(p: &AnnotatedPair) -> Self {
        PairRecord {
            post_id: p.post.id.clone(),
            post_text: p.post.text.clone(),
            topic: Some(p.post.topic),
            response_text: p.response.text.clone(),
            politeness: p.response.politeness,
            evidence: p.response.evidence,
            refuting: p.response.refuting,
            origin: p.response.origin,
            post_origin: match p.post.origin {
                PostOrigin::InTheWild => None,
                o => Some(o),
            },
        }
    }
}

/// Parses JSONL pair records; blank lines are ignored.
pub fn parse_pairs(contents: &str) -> Result<Vec<AnnotatedPair>> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let line_no = i + 1;
            let record: PairRecord = serde_json::from_str(line).map_err(|e| Error::Record {
                line: line_no,
                message: e.to_string(),
            })?;
            record.into_pair().map_err(|e| Error::Record {
                line: line_no,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<AnnotatedPair>> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&contents)
}

pub fn save_pairs(path: &Path, pairs: &[AnnotatedPair]) -> Result<()> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, &PairRecord::from(p))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// The label-only in-the-wild annotation set bundled with the crate. Texts
/// are placeholders; labels reproduce the reference label counts.
pub fn packaged_in_the_wild() -> Vec<AnnotatedPair> {
    parse_pairs(include_str!("../../data/in_the_wild_annotations.jsonl"))
        .expect("bundled annotation file is valid")
}

/// First `limit` unicode scalar values of `text`. A zero limit yields "".
pub fn truncate_to_limit(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        Some((byte, _)) => text[..byte].to_string(),
        None => text.to_string(),
    }
}

/// Keeps posts containing at least one keyword (case-insensitive substring)
/// and fills in the topic of the first matching keyword that maps to one.
pub fn keyword_filter<S: AsRef<str>>(posts: &[MisinfoPost], keywords: &[S]) -> Result<Vec<MisinfoPost>> {
    if keywords.is_empty() {
        return Err(Error::invalid("keyword list is empty"));
    }
    let lowered: Vec<String> = keywords.iter().map(|k| k.as_ref().to_lowercase()).collect();
    Ok(posts
        .iter()
        .filter_map(|post| {
            let text = post.text.to_lowercase();
            let matched: Vec<&String> = lowered.iter().filter(|k| text.contains(k.as_str())).collect();
            if matched.is_empty() {
                return None;
            }
            let mut post = post.clone();
            if post.topic == Topic::Unknown {
                if let Some(topic) = matched.iter().find_map(|k| Topic::for_keyword(k)) {
                    post.topic = topic;
                }
            }
            Some(post)
        })
        .collect())
}

/// Clean-subset selection: crowdsourced pairs are kept; other pairs are kept
/// when at least one labeled dimension is positive. Unlabeled generated
/// responses are dropped; unlabeled in-the-wild responses are an error.
pub fn filter_clean(pairs: &[AnnotatedPair]) -> Result<Vec<AnnotatedPair>> {
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let r = &pair.response;
        let keep = match (r.origin, r.has_positive_dimension()) {
            (ResponseOrigin::Crowdsourced, _) => true,
            (_, Some(positive)) => positive,
            (ResponseOrigin::Generated, None) => false,
            (ResponseOrigin::InTheWild, None) => {
                return Err(Error::invalid(format!(
                    "in-the-wild pair {i} (post {}) is missing labels",
                    pair.post.id
                )))
            }
        };
        if keep {
            out.push(pair.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedPair>,
    pub validation: Vec<AnnotatedPair>,
    pub test: Vec<AnnotatedPair>,
    pub seed: u64,
}

/// Seeded shuffle then floor allocation for validation and test; the
/// remainder goes to train.
pub fn split(pairs: &[AnnotatedPair], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {total}, expected 1")));
    }
    if pairs.len() < 3 {
        return Err(Error::invalid(format!("cannot split {} pairs three ways", pairs.len())));
    }
    let n = pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let n_val = (n as f64 * ratios[1] + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios[2] + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let take = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&order[..n_train]),
        validation: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
        seed,
    })
}
