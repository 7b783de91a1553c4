//! Line-oriented `key = value` files used for cameras, manifests and configs.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    source: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(&source, i + 1, "expected `key = value`"));
            };
            let key = k.trim().to_string();
            if entries
                .insert(key.clone(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::parse(
                    &source,
                    i + 1,
                    format!("duplicate key `{key}`"),
                ));
            }
        }
        Ok(Self { source, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                Error::parse(&self.source, *line, format!("bad value for `{key}`: {v}"))
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::parse(&self.source, 0, format!("missing key `{key}`")))
    }

    /// Keys in file order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        let mut keyed: Vec<(usize, &str)> = self
            .entries
            .iter()
            .map(|(k, (line, _))| (*line, k.as_str()))
            .collect();
        keyed.sort_unstable();
        keyed.into_iter().map(|(_, k)| k)
    }
}

/// Writes `key = value` lines in the order given.
pub fn render(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}
