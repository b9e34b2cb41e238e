//! Line-oriented `key = value` text with `[section]` headers.
//!
//! ```text
//! # comment
//! [train]
//! epochs = 40
//! ```

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDoc {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl ConfigDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = ConfigDoc::new();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {}: empty section name", n + 1)));
                }
                current = Some(name.to_string());
                doc.section_mut(name);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            let section = current
                .as_deref()
                .ok_or_else(|| Error::Config(format!("line {}: key outside any [section]", n + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if doc.get(section, key).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {section}.{key}", n + 1)));
            }
            doc.set(section, key, v.trim());
        }
        Ok(doc)
    }

    fn section_mut(&mut self, name: &str) -> &mut Vec<(String, String)> {
        let pos = match self.sections.iter().position(|(s, _)| s == name) {
            Some(p) => p,
            None => {
                self.sections.push((name.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        &mut self.sections[pos].1
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .and_then(|(_, kv)| kv.iter().find(|(k, _)| k == key))
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Display) {
        let entries = self.section_mut(section);
        let value = value.to_string();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => entries.push((key.to_string(), value)),
        }
    }

    /// `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `section.key=value`")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{path}` is not `section.key`")))?;
        self.set(section, key, value.trim());
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sections.iter().flat_map(|(s, kv)| kv.iter().map(move |(k, _)| (s.as_str(), k.as_str())))
    }

    /// Typed read of an optional key; present but unparsable values are errors.
    pub fn read<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(section, key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{section}.{key} = `{v}`: {e}")))
            })
            .transpose()
    }

    /// Overwrites `slot` when the key is present.
    pub fn read_into<T: FromStr>(&self, section: &str, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.read(section, key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Errors on any key in `section` not listed in `known`.
    pub fn check_known(&self, section: &str, known: &[&str]) -> Result<()> {
        for (s, k) in self.keys() {
            if s == section && !known.contains(&k) {
                return Err(Error::Config(format!("unknown key {s}.{k}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (name, kv)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in kv {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
