//! Flat `key = value` configuration files whose keys mirror the long flags.
//!
//! Blank lines and lines starting with `#` are ignored. Command-line flags win
//! over file values; any key never consulted is reported as an error so typos
//! do not pass silently.

use crate::{CliError, Result};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("line {}: expected 'key = value'", k + 1)));
            };
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("line {}: duplicate key '{key}'", k + 1)));
            }
        }
        Ok(Self { values, used: RefCell::default() })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    /// The flag value if given, else the parsed file value.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let file = match self.raw(key) {
            Some(s) => Some(
                s.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config key '{key}': cannot parse '{s}': {e}")))?,
            ),
            None => None,
        };
        Ok(flag.or(file))
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Comma-separated lists, e.g. `taus = 0.05, 0.95`.
    pub fn pick_list<T>(&self, flag: Option<Vec<T>>, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag.filter(|v| !v.is_empty()) {
            self.raw(key);
            return Ok(v);
        }
        match self.raw(key) {
            Some(s) => parse_list(s).map_err(|e| CliError::Usage(format!("config key '{key}': {e}"))),
            None => Ok(default),
        }
    }

    pub fn check_all_used(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self.values.keys().filter(|k| !used.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config key(s) for this command: {}", unknown.join(", "))))
        }
    }
}

pub fn parse_list<T>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("cannot parse '{p}': {e}")))
        .collect()
}
