//! Line-oriented key/value file format shared by `.acx`, `.acxschema`, and
//! `.acxr` artifacts.
//!
//! The format is deliberately plain: UTF-8, LF line endings, section headers
//! in square brackets (`[contract]`, `[requirement.pre-periods]`), and
//! `key = value` lines. Blank lines and `#` comments are ignored. It is meant
//! to be diffable, hashable, and reviewable without tooling.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One `[section]` block: the header name plus its key/value pairs in file
/// order. Duplicate keys within a section are a parse error.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section { name: name.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Parse {
            line: 0,
            msg: format!("section [{}] is missing key `{}`", self.name, key),
        })
    }

    /// Keys present in this section but not in `allowed`.
    pub fn unknown_keys(&self, allowed: &[&str]) -> Vec<String> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        self.entries
            .iter()
            .filter(|(k, _)| !allowed.contains(k.as_str()))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// A parsed key/value document: ordered sections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn sections_with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| {
            s.name.starts_with(prefix) && s.name.len() > prefix.len()
        })
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }
}

fn valid_section_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'))
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'))
}

pub fn parse(input: &str) -> Result<Document, KvError> {
    let mut doc = Document::default();
    let mut current: Option<Section> = None;

    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(KvError::Parse {
                line: line_no,
                msg: "section header missing closing `]`".into(),
            })?;
            if !valid_section_name(name) {
                return Err(KvError::Parse {
                    line: line_no,
                    msg: format!("invalid section name `{name}`"),
                });
            }
            if let Some(s) = current.take() {
                doc.push(s);
            }
            if doc.section(name).is_some() {
                return Err(KvError::Parse {
                    line: line_no,
                    msg: format!("duplicate section [{name}]"),
                });
            }
            current = Some(Section::new(name));
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(KvError::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if !valid_key(key) {
            return Err(KvError::Parse {
                line: line_no,
                msg: format!("invalid key `{key}`"),
            });
        }
        let section = current.as_mut().ok_or(KvError::Parse {
            line: line_no,
            msg: "key/value line before any section header".into(),
        })?;
        if section.get(key).is_some() {
            return Err(KvError::Parse {
                line: line_no,
                msg: format!("duplicate key `{}` in section [{}]", key, section.name),
            });
        }
        section.push(key, value);
    }
    if let Some(s) = current.take() {
        doc.push(s);
    }
    Ok(doc)
}

/// Serialize preserving section and key order. LF endings, one blank line
/// between sections.
pub fn serialize(doc: &Document) -> String {
    let mut out = String::new();
    for (i, section) in doc.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{}]", section.name);
        for (k, v) in &section.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}

/// Canonical serialization: sections sorted by name, keys sorted within each
/// section, LF endings. Two documents with equal content have equal canonical
/// bytes regardless of authoring order.
pub fn canonical(doc: &Document) -> String {
    let mut sections = doc.sections.clone();
    sections.sort_by(|a, b| a.name.cmp(&b.name));
    for s in &mut sections {
        s.entries.sort_by(|a, b| a.0.cmp(&b.0));
    }
    serialize(&Document { sections })
}

/// Shortest round-trip decimal form for a float, used everywhere a number
/// enters a canonical serialization.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
