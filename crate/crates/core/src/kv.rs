//! `key = value` configuration files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` as `T` if present.
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                path: self.source.clone(),
                line: *line,
                message: format!("cannot parse value {v:?} for {key:?}"),
            }),
        }
    }

    /// Entries under `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> Self {
        let head = format!("{prefix}.");
        Self {
            source: self.source.clone(),
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&head).map(|rest| (rest.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    path: self.source.clone(),
                    line: *line,
                    message: format!("unknown key {k:?}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types_values() {
        let kv = KeyValues::parse("t", "# header\na = 1.5\n\nname = foam # trailing\n").unwrap();
        assert_eq!(kv.get::<f64>("a").unwrap(), Some(1.5));
        assert_eq!(kv.raw("name"), Some("foam"));
        assert_eq!(kv.get::<f64>("missing").unwrap(), None);
        assert!(kv.get::<u32>("name").is_err());
    }

    #[test]
    fn rejects_bad_lines_duplicates_and_unknown_keys() {
        assert!(KeyValues::parse("t", "a 1\n").is_err());
        assert!(KeyValues::parse("t", "a = 1\na = 2\n").is_err());
        let kv = KeyValues::parse("t", "a = 1\nb = 2\n").unwrap();
        let err = kv.reject_unknown(&["a"]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn sections_strip_prefixes_and_keep_lines() {
        let kv = KeyValues::parse("t", "seed = 1\npolicy.max_taps = 9\npolicy.workspace = 0.2\n").unwrap();
        let p = kv.section("policy");
        assert_eq!(p.get::<usize>("max_taps").unwrap(), Some(9));
        assert!(matches!(p.reject_unknown(&["max_taps"]).unwrap_err(), Error::Parse { line: 3, .. }));
        assert!(kv.section("train").is_empty());
    }
}
