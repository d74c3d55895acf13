//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored; keys are dotted names such as
//! `train.lambda`. A key given twice is an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CknError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, (String, usize)>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(CknError::Config {
                    line,
                    message: format!("expected 'key = value', got '{content}'"),
                });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CknError::Config {
                    line,
                    message: format!("invalid key '{key}'"),
                });
            }
            let value = v.trim().trim_matches('"').to_string();
            if let Some((_, first)) = entries.insert(key.to_string(), (value, line)) {
                return Err(CknError::Config {
                    line,
                    message: format!("'{key}' already set on line {first}"),
                });
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CknError::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets or overrides a value; `line` 0 marks values from outside a file.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(_, l)| *l)
    }

    /// Parsed value of `key`, or `None` when absent.
    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e: V::Err| CknError::Config {
                line: *line,
                message: format!("{key}: cannot parse '{v}': {e}"),
            }),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.str(key) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(other) => Err(CknError::Config {
                line: self.line_of(key),
                message: format!("{key}: '{other}' is not a boolean"),
            }),
        }
    }

    /// Comma-separated list.
    pub fn list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: std::fmt::Display,
    {
        let Some(raw) = self.str(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: V::Err| CknError::Config {
                    line: self.line_of(key),
                    message: format!("{key}: cannot parse '{s}': {e}"),
                })
            })
            .collect::<Result<Vec<V>>>()
            .map(Some)
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> CknError {
        CknError::Config {
            line: self.line_of(key),
            message: format!("{key}: {}", message.into()),
        }
    }

    /// Rejects keys outside `known`, so typos do not pass silently.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(CknError::Config {
                    line: *line,
                    message: format!("unknown key '{k}'"),
                });
            }
        }
        Ok(())
    }
}
