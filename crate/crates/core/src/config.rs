//! Flat scenario configs: `[section]` headers followed by `key = value`
//! lines. `#` and `;` start comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    /// Column of the first character of the value.
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub sections: Vec<Section>,
}

fn config_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        column,
        message: message.into(),
    }
}

fn valid_name(s: &str, dots: bool) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || (dots && c == '.'))
}

impl Config {
    pub fn parse(src: &str) -> Result<Config> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let line = i + 1;
            let indent = raw.len() - raw.trim_start().len();
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') || text.starts_with(';') {
                continue;
            }
            if let Some(rest) = text.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, indent + text.len(), "missing ']'"))?
                    .trim();
                if !valid_name(name, true) {
                    return Err(config_err(line, indent + 2, format!("invalid section name {name:?}")));
                }
                if let Some(prev) = sections.iter().find(|s| s.name == name) {
                    return Err(config_err(
                        line,
                        indent + 1,
                        format!("section [{name}] already defined on line {}", prev.line),
                    ));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let Some(eq) = text.find('=') else {
                return Err(config_err(line, indent + 1, "expected 'key = value'"));
            };
            let key = text[..eq].trim();
            if !valid_name(key, false) {
                return Err(config_err(line, indent + 1, format!("invalid key {key:?}")));
            }
            let after = &text[eq + 1..];
            let value = after.trim();
            let column = indent + eq + 2 + (after.len() - after.trim_start().len());
            let Some(section) = sections.last_mut() else {
                return Err(config_err(line, indent + 1, "entry before any [section]"));
            };
            if let Some(prev) = section.entries.iter().find(|e| e.key == key) {
                return Err(config_err(
                    line,
                    indent + 1,
                    format!("key {key:?} already set on line {}", prev.line),
                ));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
                column,
            });
        }
        Ok(Config { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Sections named `prefix.<name>`, keyed by `<name>`.
    pub fn family(&self, prefix: &str) -> BTreeMap<String, &Section> {
        self.sections
            .iter()
            .filter_map(|s| {
                s.name
                    .strip_prefix(prefix)
                    .and_then(|r| r.strip_prefix('.'))
                    .map(|r| (r.to_string(), s))
            })
            .collect()
    }

    /// Applies `section.key=value`; the key is the text after the last dot.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let bad = |m: String| Error::Validation(format!("override {spec:?}: {m}"));
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| bad("expected section.key=value".into()))?;
        let (section, key) = path
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| bad("expected section.key=value".into()))?;
        if !valid_name(key, false) {
            return Err(bad(format!("invalid key {key:?}")));
        }
        let s = self
            .sections
            .iter_mut()
            .find(|s| s.name == section)
            .ok_or_else(|| bad(format!("no section [{section}]")))?;
        let value = value.trim().to_string();
        match s.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => s.entries.push(Entry {
                key: key.to_string(),
                value,
                line: 0,
                column: 0,
            }),
        }
        Ok(())
    }

    /// Canonical text: sections and keys in file order, normalized spacing.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str(&format!("[{}]\n", s.name));
            for e in &s.entries {
                out.push_str(&format!("{} = {}\n", e.key, e.value));
            }
        }
        out
    }
}

impl Section {
    pub fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    fn missing(&self, key: &str) -> Error {
        config_err(self.line, 1, format!("[{}] requires key {key:?}", self.name))
    }

    pub fn invalid(&self, key: &str, message: impl std::fmt::Display) -> Error {
        match self.entry(key) {
            Some(e) => config_err(e.line, e.column, format!("{key}: {message}")),
            None => config_err(self.line, 1, format!("[{}] {key}: {message}", self.name)),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| self.missing(key))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<T>().map_err(|e| self.invalid(key, e)),
        }
    }

    pub fn parse_req<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        v.parse::<T>().map_err(|e| self.invalid(key, e))
    }

    /// Comma-separated list; empty when absent.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| self.invalid(key, e)))
                .collect(),
        }
    }

    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.get(key).is_some() {
            self.list(key)
        } else {
            Ok(default)
        }
    }

    /// Fails on keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for e in &self.entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(config_err(
                    e.line,
                    1,
                    format!("unknown key {:?} in [{}]", e.key, self.name),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "# demo\n[scenario]\nname = demo\n\n[grid.main]\n  radius = 8\npoints=256\n";

    #[test]
    fn parses_sections() {
        let c = Config::parse(SRC).unwrap();
        assert_eq!(c.sections.len(), 2);
        let g = c.family("grid");
        assert_eq!(g["main"].parse_req::<f64>("radius").unwrap(), 8.0);
        let e = g["main"].entry("radius").unwrap();
        assert_eq!((e.line, e.column), (6, 12));
        assert_eq!(g["main"].parse_or("dim", 1usize).unwrap(), 1);
    }

    #[test]
    fn reports_positions() {
        let err = Config::parse("[a]\nk = 1\nnonsense\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, column: 1, .. }));
        let err = Config::parse("k = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = Config::parse("[a]\n[a]\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let c = Config::parse("[a]\nn = x\n").unwrap();
        let err = c.section("a").unwrap().parse_req::<usize>("n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, column: 5, .. }));
    }

    #[test]
    fn overrides() {
        let mut c = Config::parse(SRC).unwrap();
        c.apply_override("grid.main.points=512").unwrap();
        c.apply_override("grid.main.dim = 1").unwrap();
        assert_eq!(c.family("grid")["main"].get("points"), Some("512"));
        assert!(c.apply_override("grid.other.points=1").is_err());
        assert!(c.canonical().contains("points = 512\ndim = 1\n"));
    }
}
