use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ResponseGenerator;
use crate::error::{Error, Result};
use crate::par::{derive_seed, seeded_rng};

pub const PAIRWISE_QUESTION: &str =
    "which response is better when countering the misinformation post: the first, the second, or are they equally effective?";

pub const ANNOTATORS_PER_ITEM: usize = 2;

/// What annotators see. Contains no method names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetItem {
    pub item_id: String,
    pub post: String,
    pub response_a: String,
    pub response_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub item_id: String,
    pub method_a: String,
    pub method_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseEvalSheet {
    pub question: String,
    pub annotators_per_item: usize,
    pub items: Vec<SheetItem>,
    #[serde(skip)]
    pub mapping: Vec<MappingEntry>,
}

pub const SHEET_FILE: &str = "sheet.json";
pub const MAPPING_FILE: &str = "mapping.json";

impl PairwiseEvalSheet {
    /// JSON of the annotator-facing view only.
    pub fn annotator_view(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `sheet.json` (annotator view) and `mapping.json` (hidden).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        write(SHEET_FILE, self.annotator_view()?)?;
        write(MAPPING_FILE, serde_json::to_string_pretty(&self.mapping)?)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        let mut sheet: Self = serde_json::from_str(&read(SHEET_FILE)?)?;
        sheet.mapping = serde_json::from_str(&read(MAPPING_FILE)?)?;
        Ok(sheet)
    }
}

/// Samples `n_items` posts, answers each with both generators and shuffles
/// which answer is shown first.
pub fn export_pairwise_eval(
    generator_a: &dyn ResponseGenerator,
    generator_b: &dyn ResponseGenerator,
    posts: &[String],
    n_items: usize,
    seed: u64,
) -> Result<PairwiseEvalSheet> {
    if n_items > posts.len() {
        return Err(Error::invalid(format!("{n_items} items requested from {} posts", posts.len())));
    }
    if generator_a.id() == generator_b.id() {
        return Err(Error::invalid("the two generators must have distinct ids"));
    }
    let mut rng = seeded_rng(seed);
    let chosen: Vec<&String> = posts.choose_multiple(&mut rng, n_items).collect();
    let mut items = Vec::with_capacity(n_items);
    let mut mapping = Vec::with_capacity(n_items);
    for (i, post) in chosen.into_iter().enumerate() {
        let item_id = format!("item-{:03}", i + 1);
        let a = generator_a.respond(post, derive_seed(seed, &[i as u64, 0]))?;
        let b = generator_b.respond(post, derive_seed(seed, &[i as u64, 1]))?;
        let (first, second) = ((a, generator_a.id()), (b, generator_b.id()));
        let (first, second) = if rng.gen_bool(0.5) { (second, first) } else { (first, second) };
        items.push(SheetItem {
            item_id: item_id.clone(),
            post: post.clone(),
            response_a: first.0,
            response_b: second.0,
        });
        mapping.push(MappingEntry {
            item_id,
            method_a: first.1.to_string(),
            method_b: second.1.to_string(),
        });
    }
    Ok(PairwiseEvalSheet {
        question: PAIRWISE_QUESTION.to_string(),
        annotators_per_item: ANNOTATORS_PER_ITEM,
        items,
        mapping,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgement {
    First,
    Second,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseAnnotation {
    pub item_id: String,
    pub annotator: String,
    pub label: Judgement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseTally {
    /// Agreed wins per method name.
    pub wins: BTreeMap<String, usize>,
    pub ties: usize,
    /// Items whose two annotators disagreed.
    pub discarded: usize,
    /// Items without the full set of annotations.
    pub incomplete: usize,
}

/// Keeps items where both annotators agree and maps labels back to methods.
pub fn tally_pairwise(mapping: &[MappingEntry], annotations: &[PairwiseAnnotation]) -> Result<PairwiseTally> {
    let by_id: HashMap<&str, &MappingEntry> = mapping.iter().map(|m| (m.item_id.as_str(), m)).collect();
    let mut labels: HashMap<&str, BTreeMap<&str, Judgement>> = HashMap::new();
    for a in annotations {
        if !by_id.contains_key(a.item_id.as_str()) {
            return Err(Error::invalid(format!("annotation for unknown item {}", a.item_id)));
        }
        let per_item = labels.entry(&a.item_id).or_default();
        if per_item.insert(&a.annotator, a.label).is_some() {
            return Err(Error::invalid(format!("{} labelled {} twice", a.annotator, a.item_id)));
        }
    }
    let mut tally = PairwiseTally {
        wins: BTreeMap::new(),
        ties: 0,
        discarded: 0,
        incomplete: 0,
    };
    for m in mapping {
        tally.wins.entry(m.method_a.clone()).or_default();
        tally.wins.entry(m.method_b.clone()).or_default();
        let got: Vec<Judgement> = labels.get(m.item_id.as_str()).map(|l| l.values().copied().collect()).unwrap_or_default();
        if got.len() != ANNOTATORS_PER_ITEM {
            tally.incomplete += 1;
            continue;
        }
        if got.iter().any(|&l| l != got[0]) {
            tally.discarded += 1;
            continue;
        }
        match got[0] {
            Judgement::First => *tally.wins.entry(m.method_a.clone()).or_default() += 1,
            Judgement::Second => *tally.wins.entry(m.method_b.clone()).or_default() += 1,
            Judgement::Equal => tally.ties += 1,
        }
    }
    Ok(tally)
}
