//! Flat `key=value` text used for run configs and the config block inside
//! checkpoints.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{RanError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RanError::config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(RanError::config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(RanError::config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(KvMap { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Typed lookup; absent keys yield `default`.
    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| RanError::config(format!("bad value for {key}: {raw:?}"))),
        }
    }

    pub fn get_opt<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| RanError::config(format!("bad value for {key}: {raw:?}"))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }
}
