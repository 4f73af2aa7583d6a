//! Layered configuration: defaults, then a TOML file, then explicit
//! overrides. Later layers replace individual keys, nested tables merge.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Recursively merges `over` into `base`; tables merge key by key, any
/// other value replaces the base value.
pub fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `overrides` on top of the serialized `defaults` and deserializes
/// the result. Unknown keys are rejected when `T` denies them.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, overrides: toml::Value) -> Result<T> {
    let mut base = toml::Value::try_from(defaults).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut base, overrides);
    base.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

pub fn read_toml(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

/// Builds a table from dotted `key = value` pairs, e.g. `loss.lambda_rec`.
pub fn table_from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, toml::Value)>) -> toml::Value {
    let mut root = toml::Value::Table(Default::default());
    for (key, value) in pairs {
        let mut node = toml::Value::Table(Default::default());
        let parts: Vec<&str> = key.split('.').collect();
        let mut v = value;
        for part in parts[1..].iter().rev() {
            let mut t = toml::Table::new();
            t.insert((*part).to_string(), v);
            v = toml::Value::Table(t);
        }
        if let toml::Value::Table(t) = &mut node {
            t.insert(parts[0].to_string(), v);
        }
        merge(&mut root, node);
    }
    root
}
