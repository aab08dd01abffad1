//! Flat `section.key = value` run configuration.
//!
//! Files are TOML; tables are flattened into dotted keys so `[mope]\nsigma = 0.005`
//! and `mope.sigma = 0.005` mean the same thing. Keys are only looked up when a
//! stage needs them, and a missing key is reported by its dotted name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use toml::Value;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut entries = BTreeMap::new();
        flatten("", &table, &mut entries);
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn require(&self, key: &str) -> Result<&Value> {
        self.entries
            .get(key)
            .ok_or_else(|| anyhow!("missing config key `{key}`"))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        match self.require(key)? {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            v => bail!("config key `{key}` must be a number, got {v}"),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        match self.require(key)? {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            v => bail!("config key `{key}` must be a non-negative integer, got {v}"),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.u64(key)? as usize)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.require(key)? {
            Value::Boolean(b) => Ok(*b),
            v => bail!("config key `{key}` must be true or false, got {v}"),
        }
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        match self.require(key)? {
            Value::String(s) => Ok(s),
            v => bail!("config key `{key}` must be a string, got {v}"),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.list(key)?
            .iter()
            .map(|v| match v {
                Value::Float(f) => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                v => bail!("config key `{key}` must list numbers, got {v}"),
            })
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.list(key)?
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                v => bail!("config key `{key}` must list non-negative integers, got {v}"),
            })
            .collect()
    }

    pub fn str_list(&self, key: &str) -> Result<Vec<String>> {
        self.list(key)?
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                v => bail!("config key `{key}` must list strings, got {v}"),
            })
            .collect()
    }

    fn list(&self, key: &str) -> Result<&Vec<Value>> {
        match self.require(key)? {
            Value::Array(a) => Ok(a),
            v => bail!("config key `{key}` must be a list, got {v}"),
        }
    }

    /// Canonical text form: one `key = value` line per entry, sorted by key.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.snapshot().as_bytes()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.entries).expect("toml values serialize")
    }
}
