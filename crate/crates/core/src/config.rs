//! Flat `key = value` text files.
//!
//! One entry per line, `#` starts a comment, keys may repeat (the last
//! occurrence wins for scalar lookups).

use std::str::FromStr;

use crate::error::{usage, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(usage(format!("line {}: empty key", i + 1)));
            }
            entries.push(Entry { key: key.to_string(), value: v.trim().to_string(), line: i + 1 });
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|e| (e.key.as_str(), e.line))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries.iter().filter(|e| e.key == key).map(|e| e.value.as_str()).collect()
    }

    /// `(suffix, value)` for every key of the form `prefix.suffix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |e| {
            e.key
                .strip_prefix(prefix)
                .and_then(|s| s.strip_prefix('.'))
                .map(|s| (s, e.value.as_str()))
        })
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| parse_scalar(key, v))
            .transpose()
    }

    pub fn set_from<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.parse_value(key)? {
            *target = v;
        }
        Ok(())
    }
}

pub fn parse_scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
}

/// Comma-separated list of scalars.
pub fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}
