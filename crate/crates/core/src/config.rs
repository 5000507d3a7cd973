//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be consumed by
//! some typed getter, otherwise [`KvConfig::finish`] reports it.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(Self { entries, used: RefCell::default() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Overwrite or add a key (for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    /// Parse `key` into `slot` if present.
    pub fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.raw(key) {
            *slot = v.parse().map_err(|e| Error::Config(format!("key {key}: cannot parse {v:?}: {e}")))?;
        }
        Ok(())
    }

    /// Parse `key` with a custom parser.
    pub fn read_with<T>(&self, key: &str, slot: &mut T, parse: impl Fn(&str) -> Result<T>) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *slot = parse(v).map_err(|e| Error::Config(format!("key {key}: {e}")))?;
        }
        Ok(())
    }

    /// Error naming the first key no getter asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Error::Config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_reads_and_unknown_keys() {
        let kv = KvConfig::parse("# comment\nsteps = 10\nlr=0.5 # trailing\n\nbogus = 1\n").unwrap();
        let (mut steps, mut lr) = (0usize, 0.0f64);
        kv.read("steps", &mut steps).unwrap();
        kv.read("lr", &mut lr).unwrap();
        assert_eq!((steps, lr), (10, 0.5));
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_lines_and_values() {
        assert!(KvConfig::parse("no equals sign").is_err());
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        let kv = KvConfig::parse("steps = ten").unwrap();
        let mut steps = 0usize;
        let err = kv.read("steps", &mut steps).unwrap_err().to_string();
        assert!(err.contains("steps"));
    }
}
