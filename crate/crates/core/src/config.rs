//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment line; blank lines are
//! ignored. Keys are the long command-line flag names without the leading
//! dashes, so a file like
//!
//! ```text
//! # desk-scale run
//! code-bits = 256
//! crop-size = 61
//! epochs = 15
//! ```
//!
//! is equivalent to passing `--code-bits 256 --crop-size 61 --epochs 15`.
//! Flags given on the command line take precedence over the file.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        && !key.starts_with('-')
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(Error::Parse(format!("config line {}: bad key {k:?}", n + 1)));
            }
            if v.is_empty() {
                return Err(Error::Parse(format!("config line {}: empty value for {k}", n + 1)));
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(Error::Parse(format!("config line {}: duplicate key {k}", n + 1)));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Entries in file order.
    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// The entries as `--key value` argument pairs.
    pub fn to_args(&self) -> Vec<String> {
        self.entries.iter().flat_map(|(k, v)| [format!("--{k}"), v.clone()]).collect()
    }
}
