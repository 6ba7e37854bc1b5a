//! Flat `key = value` configuration files layered beneath command-line flags.
//!
//! Precedence is built-in default < config file < explicit flag. Lines are
//! `key = value`; blank lines and lines starting with `#` are ignored. The
//! key set is closed ([`KNOWN_KEYS`]) so a typo fails loudly instead of
//! silently leaving a default in place. Values are typed by the subcommand
//! that consumes them — a key no subcommand reads in the current invocation
//! is only checked for being known, not for parsing.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a configuration file may set. These mirror the long flag names
/// of the subcommands, with hyphens spelled as underscores.
pub const KNOWN_KEYS: &[&str] = &[
    "bundle",
    "eta",
    "format",
    "instance",
    "kind",
    "lambda",
    "lambda_partial",
    "max_iter",
    "n",
    "out",
    "p",
    "piece_cap",
    "point",
    "probe_t",
    "seed",
    "solver",
    "start_noise",
    "threshold",
    "topk",
    "trials",
    "vtol_scale",
    "x0",
];

/// Parsed configuration file: raw string values by key.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    /// Configuration with no file behind it; every lookup yields `None`.
    pub fn empty() -> Self {
        FileConfig::default()
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read config file '{}': {e}", path.display()))
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses configuration text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{origin}:{lineno}: expected 'key = value', got '{line}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::usage(format!(
                    "{origin}:{lineno}: unknown config key '{key}'"
                )));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::usage(format!(
                    "{origin}:{lineno}: duplicate config key '{key}'"
                )));
            }
        }
        Ok(FileConfig { values })
    }

    /// Looks up and parses one key. Absent keys are `Ok(None)`; present but
    /// unparsable values are an error naming the key and the raw text.
    pub fn get<T>(&self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "lookup of undeclared config key '{key}'");
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::usage(format!("config key '{key}': cannot parse '{raw}': {e}"))
            }),
        }
    }
}

/// Flag value, else config-file value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag value, else config-file value, else an error naming the flag.
pub fn pick_required<T>(
    flag: Option<T>,
    file: Option<T>,
    flag_name: &str,
) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::usage(format!("missing required --{flag_name} (or config key)")))
}
