//! Flat key-value config files and flag/config/default precedence.
//!
//! Format: one `key = value` per line, `#` comments, blank lines ignored.
//! A command-line flag beats the config file, which beats the built-in
//! default; every effective value is echoed into the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crosstext::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    /// Effective values accumulated for the manifest.
    effective: std::cell::RefCell<BTreeMap<String, String>>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                    line: i + 1,
                    msg: "expected 'key = value'".into(),
                })?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings {
            values,
            effective: Default::default(),
        })
    }

    /// Resolve one setting: flag > config file > default. The winning value
    /// is recorded for the manifest.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.values.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| Error::Arg(format!("config key '{key}': bad value '{raw}'")))?,
                None => default,
            },
        };
        self.effective
            .borrow_mut()
            .insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn note(&self, key: &str, value: impl Display) {
        self.effective
            .borrow_mut()
            .insert(key.to_string(), value.to_string());
    }

    pub fn effective(&self) -> BTreeMap<String, String> {
        self.effective.borrow().clone()
    }
}
