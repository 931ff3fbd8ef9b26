//! Flat `key = value` files with `[section]` headers.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also `;`)
//! [section.name]       section header; names may contain `.`, `_`, `-`
//! key = value          value is everything after the first `=`, trimmed
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`. Lists are
//! comma-separated values. Duplicate keys within a section are an error.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    fn field(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("field `{}`: {e} (got `{raw}`)", self.field(key)))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| Error::Config(format!("missing field `{}`", self.field(key))))
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(raw) = self.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("field `{}`: {e} (got `{s}`)", self.field(key))))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Errors on keys outside `allowed`, naming the offending field.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown field `{}`", self.field(k))));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    sections: Vec<Section>,
}

impl KvFile {
    pub fn new() -> Self {
        KvFile::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn section_mut(&mut self, name: &str) -> &mut Section {
        if let Some(i) = self.sections.iter().position(|s| s.name == name) {
            return &mut self.sections[i];
        }
        self.sections.push(Section::new(name));
        self.sections.last_mut().unwrap()
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    /// Sections whose name starts with `prefix.`, in file order.
    pub fn sections_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections
            .iter()
            .filter(move |s| s.name.strip_prefix(prefix).is_some_and(|r| r.starts_with('.')))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut file = KvFile::new();
        let mut current = String::new();
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, "unterminated section header".into()))?
                    .trim();
                if name.is_empty()
                    || !name
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
                {
                    return Err(err(line_no, format!("bad section name `{name}`")));
                }
                if file.section(name).is_some() {
                    return Err(err(line_no, format!("duplicate section `{name}`")));
                }
                current = name.to_string();
                file.section_mut(&current);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err(line_no, "empty key".into()));
            }
            let section = file.section_mut(&current);
            if section.get(k).is_some() {
                return Err(err(line_no, format!("duplicate key `{k}`")));
            }
            section.entries.push((k.to_string(), v.to_string()));
        }
        Ok(file)
    }
}

impl fmt::Display for KvFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for s in &self.sections {
            if s.name.is_empty() && s.entries.is_empty() {
                continue;
            }
            if !first {
                writeln!(f)?;
            }
            first = false;
            if !s.name.is_empty() {
                writeln!(f, "[{}]", s.name)?;
            }
            for (k, v) in &s.entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

/// Formats a float list for a config value.
pub fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
