//! Run configuration: defaults, an optional `key=value` file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;

/// Output encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// JSON following the series schema.
    Json,
    /// Comma-separated rows with a fixed header.
    Csv,
    /// A Markdown table.
    Md,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "md" => Ok(Format::Md),
            other => Err(format!("unknown format {other:?} (expected json, csv or md)")),
        }
    }
}

/// A usage or configuration problem, reported with exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Settings shared by every subcommand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    /// Largest coupling index.
    pub kmax: usize,
    /// Largest total degree.
    pub dmax: u32,
    /// Largest genus; F-type outputs keep `ℓ ∈ [-1, gmax - 1]`.
    pub gmax: u32,
    /// Output encoding.
    pub format: Format,
    /// Selected verification suites, `None` for all.
    pub suite: Option<Vec<String>>,
    /// Output file, stdout when absent.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { kmax: 4, dmax: 6, gmax: 3, format: Format::Json, suite: None, out: None }
    }
}

/// Values given on the command line; each one overrides the file and the defaults.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Overrides {
    pub kmax: Option<usize>,
    pub dmax: Option<u32>,
    pub gmax: Option<u32>,
    pub format: Option<Format>,
    pub suite: Option<String>,
    pub out: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError(format!("bad value {value:?} for {key}")))
}

/// Splits a comma list of suite names, rejecting an empty selection.
pub fn parse_suite(s: &str) -> Result<Vec<String>, ConfigError> {
    let names: Vec<String> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect();
    if names.is_empty() {
        return Err(ConfigError("empty suite selection".into()));
    }
    Ok(names)
}

impl RunConfig {
    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "kmax" => self.kmax = parse(key, value)?,
                "dmax" => self.dmax = parse(key, value)?,
                "gmax" => self.gmax = parse(key, value)?,
                "format" => self.format = value.parse().map_err(ConfigError)?,
                "suite" => self.suite = Some(parse_suite(value)?),
                "out" => self.out = Some(PathBuf::from(value)),
                other => return Err(ConfigError(format!("line {}: unknown key {other:?}", no + 1))),
            }
        }
        Ok(())
    }

    /// Reads a config file.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies command-line values.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(k) = o.kmax {
            self.kmax = k;
        }
        if let Some(d) = o.dmax {
            self.dmax = d;
        }
        if let Some(g) = o.gmax {
            self.gmax = g;
        }
        if let Some(f) = o.format {
            self.format = f;
        }
        if let Some(s) = &o.suite {
            self.suite = Some(parse_suite(s)?);
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        Ok(())
    }

    /// The λ-window `[-1, gmax - 1]` of F-type outputs.
    pub fn lambda_window(&self) -> (i32, i32) {
        (-1, self.gmax as i32 - 1)
    }
}
