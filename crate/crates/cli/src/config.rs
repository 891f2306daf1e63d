//! Flat key-value configuration files with `[section]` headers. Every value
//! keeps its source line so validation failures point at the offending line,
//! and consumed keys are tracked so typos are reported rather than ignored.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed configuration file.
#[derive(Debug)]
pub struct Config {
    origin: String,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    consumed: RefCell<Vec<(String, String)>>,
}

impl Config {
    pub fn load(path: &Path) -> ConfigResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> ConfigResult<Config> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = String::from("experiment");
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') || line.len() < 3 {
                    return Err(ConfigError(format!(
                        "{origin}:{line_no}: malformed section header '{raw}'"
                    )));
                }
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "{origin}:{line_no}: expected 'key = value', found '{raw}'"
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError(format!("{origin}:{line_no}: empty key")));
            }
            let section = sections.entry(current.clone()).or_default();
            if section.contains_key(&key) {
                return Err(ConfigError(format!(
                    "{origin}:{line_no}: duplicate key '{key}' in section [{current}]"
                )));
            }
            section.insert(key, Entry { value, line: line_no });
        }
        Ok(Config {
            origin: origin.to_string(),
            sections,
            consumed: RefCell::new(Vec::new()),
        })
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        let e = self.sections.get(section)?.get(key)?;
        self.consumed
            .borrow_mut()
            .push((section.to_string(), key.to_string()));
        Some(e)
    }

    fn parse_with<T, F: Fn(&str) -> Option<T>>(
        &self,
        section: &str,
        key: &str,
        what: &str,
        f: F,
    ) -> ConfigResult<Option<T>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).ok_or_else(|| {
                ConfigError(format!(
                    "{}:{}: key '{key}' in [{section}] must be {what}, found '{}'",
                    self.origin, e.line, e.value
                ))
            }),
        }
    }

    pub fn string(&self, section: &str, key: &str) -> Option<String> {
        self.entry(section, key).map(|e| e.value.clone())
    }

    pub fn u64(&self, section: &str, key: &str) -> ConfigResult<Option<u64>> {
        self.parse_with(section, key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn usize(&self, section: &str, key: &str) -> ConfigResult<Option<usize>> {
        self.parse_with(section, key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn f64(&self, section: &str, key: &str) -> ConfigResult<Option<f64>> {
        self.parse_with(section, key, "a number", |s| s.parse().ok())
    }

    pub fn bool(&self, section: &str, key: &str) -> ConfigResult<Option<bool>> {
        self.parse_with(section, key, "true or false", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    pub fn usize_list(&self, section: &str, key: &str) -> ConfigResult<Option<Vec<usize>>> {
        self.parse_with(section, key, "a space-separated list of unsigned integers", |s| {
            s.split_whitespace().map(|t| t.parse().ok()).collect()
        })
    }

    pub fn f64_list(&self, section: &str, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        self.parse_with(section, key, "a space-separated list of numbers", |s| {
            s.split_whitespace().map(|t| t.parse().ok()).collect()
        })
    }

    pub fn string_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.entry(section, key)
            .map(|e| e.value.split_whitespace().map(str::to_string).collect())
    }

    /// Error naming the line of `key` (or the section) for semantic
    /// validation failures.
    pub fn fail(&self, section: &str, key: &str, message: &str) -> ConfigError {
        match self.sections.get(section).and_then(|s| s.get(key)) {
            Some(e) => ConfigError(format!(
                "{}:{}: key '{key}' in [{section}]: {message}",
                self.origin, e.line
            )),
            None => ConfigError(format!(
                "{}: key '{key}' in [{section}]: {message}",
                self.origin
            )),
        }
    }

    /// Reports any key that no command consumed (catches typos).
    pub fn ensure_all_consumed(&self) -> ConfigResult<()> {
        let consumed = self.consumed.borrow();
        for (section, entries) in &self.sections {
            for (key, entry) in entries {
                if !consumed
                    .iter()
                    .any(|(s, k)| s == section && k == key)
                {
                    return Err(ConfigError(format!(
                        "{}:{}: unknown key '{key}' in section [{section}]",
                        self.origin, entry.line
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The fully resolved configuration a command actually ran with; echoed to
/// the output directory so a run can be reproduced from its artifacts.
#[derive(Debug, Default)]
pub struct Effective {
    entries: Vec<(String, String, String)>,
}

impl Effective {
    pub fn push(&mut self, section: &str, key: &str, value: impl std::fmt::Display) {
        self.entries
            .push((section.to_string(), key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut last_section = "";
        for (section, key, value) in &self.entries {
            if section != last_section {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                last_section = section;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("effective.cfg");
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}
