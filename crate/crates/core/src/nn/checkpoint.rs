//! Checkpoint directories: `weights.safetensors`, a `meta.json` sidecar and
//! the `tokenizer.json` the weights were trained against.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{device, Params};
use crate::error::{Error, Result};
use crate::text::Tokenizer;

pub const CHECKPOINT_FORMAT: u32 = 1;
const WEIGHTS: &str = "weights.safetensors";
const META: &str = "meta.json";
const TOKENIZER: &str = "tokenizer.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub format: u32,
    pub kind: String,
    pub vocab_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Free-form training provenance (data source, epochs, steps, ...).
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(kind: &str, tokenizer: &Tokenizer, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            format: CHECKPOINT_FORMAT,
            kind: kind.to_string(),
            vocab_hash: tokenizer.fingerprint(),
            seed,
            config: serde_json::to_value(config)?,
            provenance: serde_json::Value::Null,
        })
    }

    pub fn save(&self, dir: &Path, tokenizer: &Tokenizer, params: &Params) -> Result<()> {
        if self.vocab_hash != tokenizer.fingerprint() {
            return Err(Error::Checkpoint("metadata vocab hash does not match tokenizer".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = params.tensors_copy()?;
        candle_core::safetensors::save(&tensors, dir.join(WEIGHTS))?;
        write(&dir.join(META), &serde_json::to_string_pretty(self)?)?;
        write(&dir.join(TOKENIZER), &tokenizer.to_json())
    }

    /// Reads a checkpoint of the given kind and verifies its tokenizer.
    pub fn load(dir: &Path, kind: &str) -> Result<(Self, Tokenizer, HashMap<String, Tensor>)> {
        let meta: CheckpointMeta = serde_json::from_str(&read(&dir.join(META))?)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {}", meta.format)));
        }
        if meta.kind != kind {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} checkpoint, expected {kind}",
                dir.display(),
                meta.kind
            )));
        }
        let tokenizer = Tokenizer::from_json(&read(&dir.join(TOKENIZER))?)?;
        if tokenizer.fingerprint() != meta.vocab_hash {
            return Err(Error::Checkpoint("tokenizer does not match recorded vocab hash".into()));
        }
        let tensors = candle_core::safetensors::load(dir.join(WEIGHTS), &device())?;
        Ok((meta, tokenizer, tensors))
    }

    /// Short content hash of the weights file.
    pub fn weights_id(dir: &Path) -> Result<String> {
        let path = dir.join(WEIGHTS);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let digest = Sha256::digest(&bytes);
        Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
