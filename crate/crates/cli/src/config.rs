//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` or `;` are ignored, as are
//! `[section]` headers. Keys are case-sensitive and may use `-` or `_`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{CliError, CliResult};

pub const KNOWN_KEYS: &[&str] = &[
    "eta", "eta-min", "eta-max", "eta-step", "tau", "tau-min", "tau-max", "tau-step", "S", "q1", "q2", "nu", "nphi",
    "tol", "out", "svg", "threads", "rho-min", "rho-max", "rho-step", "c", "d", "U", "a", "b", "kbt",
];

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("config line {}: expected key = value", n + 1)))?;
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Invalid(format!(
                    "config line {}: unknown key `{}`",
                    n + 1,
                    k.trim()
                )));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> CliResult<Option<f64>> {
        self.get_str(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| CliError::Invalid(format!("config key `{key}`: `{v}` is not a number")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> CliResult<Option<usize>> {
        self.get_str(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| CliError::Invalid(format!("config key `{key}`: `{v}` is not a count")))
            })
            .transpose()
    }
}
