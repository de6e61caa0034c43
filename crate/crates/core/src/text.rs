//! Subword tokenizer shared by the policy, the reference language model and
//! the classifiers.
//!
//! Byte-pair merges are learned over whitespace-prefixed chunks (a chunk
//! starts at every space), so decoding is plain concatenation. The base
//! alphabet is printable ASCII plus every character seen in training; any
//! other character is rejected with [`Error::UnknownChar`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const SEP: u32 = 2;
const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<sep>"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TokenizerFile {
    alphabet: Vec<char>,
    merges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    file: TokenizerFile,
    pieces: Vec<String>,
    char_ids: HashMap<char, u32>,
    ranks: HashMap<(u32, u32), u32>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file
    }
}

impl Tokenizer {
    /// A character-level tokenizer over exactly `alphabet` (plus specials).
    pub fn from_alphabet(alphabet: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = alphabet.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::build(TokenizerFile {
            alphabet: chars,
            merges: Vec::new(),
        })
        .expect("merge-free tokenizer is always valid")
    }

    /// Learns up to `num_merges` byte-pair merges from `texts`.
    pub fn train<S: AsRef<str>>(texts: &[S], num_merges: usize) -> Self {
        let mut alphabet: Vec<char> = (0x20u8..0x7f).map(char::from).collect();
        alphabet.extend(texts.iter().flat_map(|t| t.as_ref().chars()));
        let base = Self::from_alphabet(alphabet);

        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for chunk in chunks(t.as_ref()) {
                *freq.entry(chunk).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, usize)> = freq
            .into_iter()
            .map(|(w, n)| (w.chars().map(|c| base.char_ids[&c]).collect(), n))
            .collect();

        let mut merges = Vec::with_capacity(num_merges);
        let mut next_id = base.pieces.len() as u32;
        for _ in 0..num_merges {
            let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
            for (ids, n) in &words {
                for w in ids.windows(2) {
                    *counts.entry((w[0], w[1])).or_default() += n;
                }
            }
            let best = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some((pair, _)) = best else { break };
            for (ids, _) in words.iter_mut() {
                merge_pair(ids, pair, next_id);
            }
            merges.push(pair);
            next_id += 1;
        }
        Self::build(TokenizerFile {
            alphabet: base.file.alphabet,
            merges,
        })
        .expect("learned merges reference existing ids")
    }

    fn build(file: TokenizerFile) -> Result<Self> {
        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut char_ids = HashMap::new();
        for &c in &file.alphabet {
            char_ids.insert(c, pieces.len() as u32);
            pieces.push(c.to_string());
        }
        let mut ranks = HashMap::new();
        for (rank, &(a, b)) in file.merges.iter().enumerate() {
            let n = pieces.len() as u32;
            if a >= n || b >= n || a < SPECIALS.len() as u32 || b < SPECIALS.len() as u32 {
                return Err(Error::Checkpoint(format!("merge {rank} references invalid ids")));
            }
            pieces.push(format!("{}{}", pieces[a as usize], pieces[b as usize]));
            ranks.insert((a, b), rank as u32);
        }
        Ok(Self {
            file,
            pieces,
            char_ids,
            ranks,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// Encodes text without adding special tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(text.len());
        for chunk in chunks(text) {
            let mut ids = chunk
                .chars()
                .map(|c| self.char_ids.get(&c).copied().ok_or(Error::UnknownChar(c)))
                .collect::<Result<Vec<u32>>>()?;
            loop {
                let best = ids
                    .windows(2)
                    .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                    .min();
                let Some((rank, pair)) = best else { break };
                let id = (self.pieces.len() - self.file.merges.len()) as u32 + rank;
                merge_pair(&mut ids, pair, id);
            }
            out.extend(ids);
        }
        Ok(out)
    }

    /// Concatenates token pieces, skipping special tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !self.is_special(id))
            .filter_map(|&id| self.piece(id))
            .collect()
    }

    /// Number of characters `id` contributes to decoded text.
    pub fn piece_chars(&self, id: u32) -> usize {
        if self.is_special(id) {
            0
        } else {
            self.piece(id).map_or(0, |p| p.chars().count())
        }
    }

    /// Hex SHA-256 of the serialized vocabulary; recorded in checkpoint sidecars.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.file).expect("tokenizer serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.file).expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::build(serde_json::from_str(s)?)
    }
}

/// Splits text so that every chunk after the first begins with a space.
fn chunks(text: &str) -> impl Iterator<Item = &str> {
    let mut starts: Vec<usize> = text
        .char_indices()
        .filter(|&(i, c)| i > 0 && c == ' ')
        .map(|(i, _)| i)
        .collect();
    starts.insert(0, 0);
    starts.push(text.len());
    let bounds: Vec<(usize, usize)> = starts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| a < b)
        .collect();
    bounds.into_iter().map(move |(a, b)| &text[a..b])
}

fn merge_pair(ids: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> Vec<&'static str> {
        vec![
            "vaccines do not contain microchips",
            "thank you for sharing, but vaccines are safe",
            "the vaccine does not change your dna",
            "vaccines do not cause infertility",
        ]
    }

    #[test]
    fn learned_merges_shorten_common_words() {
        let tok = Tokenizer::train(&corpus(), 50);
        let ids = tok.encode("vaccines do not").unwrap();
        assert!(ids.len() < "vaccines do not".len());
        assert_eq!(tok.decode(&ids), "vaccines do not");
    }

    #[test]
    fn specials_are_reserved_and_skipped_on_decode() {
        let tok = Tokenizer::train(&corpus(), 10);
        assert_eq!(tok.piece(EOS), Some("<eos>"));
        let mut ids = vec![BOS];
        ids.extend(tok.encode("safe").unwrap());
        ids.push(EOS);
        assert_eq!(tok.decode(&ids), "safe");
    }

    #[test]
    fn unknown_character_is_an_error() {
        let tok = Tokenizer::from_alphabet("ab".chars());
        assert!(matches!(tok.encode("abc"), Err(Error::UnknownChar('c'))));
    }

    #[test]
    fn json_round_trip_preserves_fingerprint() {
        let tok = Tokenizer::train(&corpus(), 30);
        let back = Tokenizer::from_json(&tok.to_json()).unwrap();
        assert_eq!(tok, back);
        assert_eq!(tok.fingerprint(), back.fingerprint());
        assert_ne!(tok.fingerprint(), Tokenizer::train(&corpus(), 5).fingerprint());
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(Tokenizer::train(&corpus(), 40), Tokenizer::train(&corpus(), 40));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in "[ -~]{0,80}") {
            let tok = Tokenizer::train(&corpus(), 60);
            let ids = tok.encode(&s).unwrap();
            prop_assert_eq!(tok.decode(&ids), s);
        }
    }
}
