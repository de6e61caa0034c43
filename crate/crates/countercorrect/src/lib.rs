//! HTTP service and configuration loading for the `countercorrect` binary.

pub mod cli;
pub mod http;

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;

/// Parses a TOML file into `T`; missing keys take their defaults.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
