//! Flat `key = value` configuration files.
//!
//! Files are parsed as TOML. Tables flatten into dotted keys (`[train]`
//! `seed = 1` becomes `train.seed`); arrays are rejected. Each consumer
//! pulls the keys it understands.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_string(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        let mut entries = BTreeMap::new();
        flatten(&table, "", text, origin, &mut entries)?;
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Invalid(format!("bad value '{s}' for key '{key}'"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Overlays `other` on top of `self` (entries in `other` win).
    pub fn merge(&mut self, other: &FlatConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| {
                if v.parse::<f64>().is_ok() || v == "true" || v == "false" {
                    format!("{k} = {v}\n")
                } else {
                    format!("{k} = {v:?}\n")
                }
            })
            .collect()
    }
}

fn flatten(
    table: &toml::Table,
    prefix: &str,
    text: &str,
    origin: &str,
    out: &mut BTreeMap<String, String>,
) -> Result<()> {
    for (k, v) in table {
        let key = format!("{prefix}{k}");
        let s = match v {
            toml::Value::Table(t) => {
                flatten(t, &format!("{key}."), text, origin, out)?;
                continue;
            }
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => {
                let line = text
                    .lines()
                    .position(|l| l.trim_start().starts_with(k.as_str()))
                    .map_or(0, |p| p + 1);
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("key '{key}' must be a scalar, got {}", other.type_str()),
                });
            }
        };
        out.insert(key, s);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_scalars() {
        let c = FlatConfig::parse("n_fft = 256\nwindow = \"hann\"\n# note\nnoise_ms = 100.0\n", "t").unwrap();
        assert_eq!(c.get_parsed::<usize>("n_fft").unwrap(), Some(256));
        assert_eq!(c.get("window"), Some("hann"));
        assert_eq!(c.get_parsed::<f64>("noise_ms").unwrap(), Some(100.0));
        assert_eq!(c.get_parsed::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_nested_values_with_line() {
        let err = FlatConfig::parse("a = 1\nb = [1, 2]\n", "cfg").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = FlatConfig::parse("a = 1\nb = = 2\n", "cfg").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn tables_flatten_to_dotted_keys() {
        let c = FlatConfig::parse("n_fft = 128\n[train]\nseed = 3\n[model]\nembed_dim = 32\n", "t").unwrap();
        assert_eq!(c.get("train.seed"), Some("3"));
        assert_eq!(c.get("model.embed_dim"), Some("32"));
        assert_eq!(c.get("n_fft"), Some("128"));
        let d = FlatConfig::parse("train.seed = 3\n", "t").unwrap();
        assert_eq!(d.get("train.seed"), Some("3"));
    }

    #[test]
    fn text_round_trip() {
        let mut c = FlatConfig::default();
        c.set("hop", "64");
        c.set("window", "hann");
        c.set("train.peak_lr", "0.0007");
        assert_eq!(FlatConfig::parse(&c.to_text(), "x").unwrap(), c);
    }
}
