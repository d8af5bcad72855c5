//! Flat `key = value` configuration files. Every flag has a config
//! equivalent; command-line flags override config values.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: HashMap<String, String>,
    /// Directory of the config file; relative paths resolve against it.
    base: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut values = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key = value, got {raw:?}", idx + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { values, base: None })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key}={raw:?}: {e}")),
        }
    }

    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.resolve(Path::new(v)))
    }

    /// Resolve a possibly relative path against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        match &self.base {
            Some(base) => base.join(path),
            None => path.to_path_buf(),
        }
    }
}

/// Flag-over-config merge for optional values with a final default.
pub fn pick<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let cfg = Config::parse("# comment\nseed = 17\nout = pairs.jsonl\n").unwrap();
        assert_eq!(cfg.get("seed"), Some("17"));
        assert_eq!(cfg.get_parsed::<u64>("seed").unwrap(), Some(17));
        assert_eq!(pick(Some(3u64), cfg.get_parsed("seed").unwrap(), 0), 3);
        assert_eq!(pick(None, cfg.get_parsed("seed").unwrap(), 0), 17);
        assert_eq!(pick::<u64>(None, None, 5), 5);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Config::parse("not a pair\n").is_err());
    }
}
