//! Layered run configuration: command-line flag > config file > default.
//!
//! Config files are UTF-8 `key = value` lines; `#` starts a comment.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Self::parse(&text, path)
            }
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!(
                    "{}:{}: expected \"key = value\", got {raw:?}",
                    path.display(),
                    lineno + 1
                )
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| anyhow!("config key {key}: cannot parse {v:?}")),
        }
    }

    pub fn get_string(&self, key: &str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    /// flag > config file > default.
    pub fn resolve<T: std::str::FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.get::<T>(key)?.unwrap_or(default))
    }

}

/// Paper-derived defaults for the whole configuration surface.
pub mod defaults {
    pub const MAX_LEN: usize = 5;
    pub const PMI_THRESHOLD: f64 = 0.0;
    pub const LAYERS: usize = 2;
    pub const EPOCHS: usize = 50;
    pub const BATCH: usize = 16;
    pub const SEED: u64 = 42;
    pub const WARMUP: f64 = 0.1;
    pub const DROPOUT: f64 = 0.2;
    pub const MAX_TAGS: usize = 425;
    pub const D0: usize = 32;
    /// Learning rate for fixed (precomputed) encoders.
    pub const LR_PRECOMPUTED: f64 = 1e-5;
    /// Randomly initialized lookup embeddings need a larger rate.
    pub const LR_LOOKUP: f64 = 1e-3;
    pub const BEAM_TAG: f64 = 1.0;
    pub const BEAM_PARSE: f64 = 0.1;
}
