//! Flat `key = value` configuration with `block.key` prefixes.
//!
//! ```text
//! # comment
//! problem.A = [[0, -1], [1, 0]]
//! problem.alpha = 1.5
//! flow = closed_u
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    /// 1-based source line, 0 for overrides and missing keys.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

fn err<T>(line: usize, message: impl Into<String>) -> ConfigResult<T> {
    Err(ConfigError { line, message: message.into() })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return err(line, format!("expected `key = value`, got `{content}`"));
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return err(line, format!("invalid key `{key}`"));
            }
            if let Some((_, first)) = entries.get(key) {
                return err(line, format!("duplicate key `{key}` (first set on line {first})"));
            }
            entries.insert(key.to_string(), (value.trim().to_string(), line));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: 0, message: format!("cannot read {}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    /// Applies `key=value`, replacing any existing entry.
    pub fn apply_override(&mut self, spec: &str) -> ConfigResult<()> {
        let Some((key, value)) = spec.split_once('=') else {
            return err(0, format!("override `{spec}` is not of the form key=value"));
        };
        let key = key.trim();
        if key.is_empty() {
            return err(0, format!("override `{spec}` has an empty key"));
        }
        self.entries.insert(key.to_string(), (value.trim().to_string(), 0));
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.1)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.str(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> ConfigResult<&str> {
        self.str(key).ok_or_else(|| ConfigError { line: 0, message: format!("missing required key `{key}`") })
    }

    pub fn f64(&self, key: &str) -> ConfigResult<Option<f64>> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(None) };
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => err(*line, format!("`{key}` must be a finite number, got `{v}`")),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str) -> ConfigResult<Option<usize>> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(None) };
        v.parse::<usize>()
            .map(Some)
            .or_else(|_| err(*line, format!("`{key}` must be a non-negative integer, got `{v}`")))
    }

    pub fn u64(&self, key: &str) -> ConfigResult<Option<u64>> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(None) };
        v.parse::<u64>()
            .map(Some)
            .or_else(|_| err(*line, format!("`{key}` must be a non-negative integer, got `{v}`")))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> ConfigResult<bool> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(default) };
        match v.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => err(*line, format!("`{key}` must be true or false, got `{v}`")),
        }
    }

    /// A bracketed list `[a, b, c]` (a bare scalar counts as a one-element list).
    pub fn vector(&self, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(None) };
        parse_vector(v).map(Some).map_err(|m| ConfigError { line: *line, message: format!("`{key}`: {m}") })
    }

    /// Row-major `[[a, b], [c, d]]`.
    pub fn matrix(&self, key: &str) -> ConfigResult<Option<DMatrix<f64>>> {
        let Some((v, line)) = self.entries.get(key) else { return Ok(None) };
        parse_matrix(v).map(Some).map_err(|m| ConfigError { line: *line, message: format!("`{key}`: {m}") })
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.str(key).map(|v| {
            v.trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect()
}

pub fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        if inner.contains('[') || inner.contains(']') {
            return Err("expected a flat list".into());
        }
        parse_numbers(inner)
    } else {
        parse_numbers(s)
    }
}

pub fn parse_matrix(s: &str) -> Result<DMatrix<f64>, String> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| "matrices are written as [[row], [row], ...]".to_string())?
        .trim();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rest = inner;
    while !rest.is_empty() {
        let open = rest.strip_prefix('[').ok_or_else(|| format!("expected `[` at `{rest}`"))?;
        let close = open.find(']').ok_or_else(|| "unbalanced brackets".to_string())?;
        rows.push(parse_numbers(&open[..close])?);
        rest = open[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("unexpected `{rest}` after a row"));
        }
    }
    if rows.is_empty() {
        return Err("empty matrix".into());
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err("rows must be non-empty and of equal length".into());
    }
    let flat: Vec<f64> = rows.concat();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}
