//! `key=value` line files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub(crate) struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub(crate) fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got `{body}`")))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(KvFile { entries })
    }

    pub(crate) fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(*line, format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub(crate) fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub(crate) fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    pub(crate) fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub(crate) fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Reject keys outside `known` (prefix match when the entry ends in `.`).
    pub(crate) fn deny_unknown(&self, known: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            let ok = known
                .iter()
                .any(|k| if k.ends_with('.') { key.starts_with(k) } else { key == k });
            if !ok {
                return Err(Error::parse(*line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types() {
        let kv = KvFile::parse("# c\na = 3\n\nb=x # trailing\n").unwrap();
        assert_eq!(kv.require::<usize>("a").unwrap(), 3);
        assert_eq!(kv.raw("b"), Some("x"));
        assert!(kv.get::<usize>("b").is_err());
        assert_eq!(kv.get_or("zz", 7usize).unwrap(), 7);
        assert!(KvFile::parse("a=1\na=2").is_err());
        assert!(KvFile::parse("novalue").is_err());
        assert!(kv.deny_unknown(&["a"]).is_err());
        assert!(kv.deny_unknown(&["a", "b"]).is_ok());
    }
}
