//! Flat `section.key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// A diagnostic pointing at a config line (0 for command-line overrides).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "override: {}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, (String, usize)>,
}

pub const SECTIONS: [&str; 3] = ["problem", "solver", "output"];

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError {
                line,
                message: format!("expected `section.key = value`, got `{body}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            check_key(key).map_err(|message| ConfigError { line, message })?;
            if value.is_empty() {
                return Err(ConfigError {
                    line,
                    message: format!("`{key}` has an empty value"),
                });
            }
            if let Some((_, first)) = entries.insert(key.to_string(), (value.to_string(), line)) {
                return Err(ConfigError {
                    line,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
        }
        Ok(Config { entries })
    }

    /// Sets a value from the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        check_key(key).map_err(|message| ConfigError { line: 0, message })?;
        self.entries.insert(key.to_string(), (value.to_string(), 0));
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(_, l)| *l)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line(key),
            message: format!("`{key}`: {}", message.into()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| self.error(key, format!("expected {}, got `{v}`", type_name::<T>()))),
        }
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Comma-separated numbers.
    pub fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| self.error(key, format!("expected a list of numbers, got `{v}`")))
                })
                .collect(),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn check_known(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for key in self.keys() {
            if !allowed.contains(&key) {
                return Err(self.error(key, "unknown key for this problem and solver"));
            }
        }
        Ok(())
    }
}

fn check_key(key: &str) -> Result<(), String> {
    let (section, name) = key
        .split_once('.')
        .ok_or_else(|| format!("key `{key}` must look like `section.name`"))?;
    if !SECTIONS.contains(&section) {
        return Err(format!(
            "unknown section `{section}` (expected one of {})",
            SECTIONS.join(", ")
        ));
    }
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
        return Err(format!("invalid key `{key}`"));
    }
    Ok(())
}

fn type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    match full {
        "usize" | "u64" | "u32" => "a nonnegative integer",
        "f64" => "a number",
        _ => full,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let c =
            Config::parse("# heat\nproblem.name = heat_1d  # trailing\n\nproblem.n=16\nsolver.lambda = 0.1, 0.01\n")
                .unwrap();
        assert_eq!(c.raw("problem.name"), Some("heat_1d"));
        assert_eq!(c.get::<usize>("problem.n", 0).unwrap(), 16);
        assert_eq!(c.list("solver.lambda", &[]).unwrap(), vec![0.1, 0.01]);
        assert_eq!(c.line("problem.n"), 4);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        assert_eq!(Config::parse("problem.n 16").unwrap_err().line, 1);
        assert!(Config::parse("a.b = 1")
            .unwrap_err()
            .message
            .contains("unknown section"));
        let dup = Config::parse("problem.n = 1\nproblem.n = 2").unwrap_err();
        assert_eq!(dup.line, 2);
        let c = Config::parse("\nproblem.n = many").unwrap();
        let e = c.get::<usize>("problem.n", 1).unwrap_err();
        assert_eq!(
            e.to_string(),
            "line 2: `problem.n`: expected a nonnegative integer, got `many`"
        );
    }
}
