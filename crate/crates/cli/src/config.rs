//! JSON config files: a flat object whose keys mirror the long flag names
//! with underscores. Flags given on the command line win.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    map: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| crate::DataError(format!("config {}: {e}", path.display())))?;
        match value {
            Value::Object(map) => Ok(Self { map }),
            _ => Err(crate::DataError(format!("config {} must be a JSON object", path.display())).into()),
        }
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> anyhow::Result<Option<T>> {
        self.map
            .get(key)
            .map(|v| {
                serde_json::from_value(v.clone()).map_err(|e| crate::DataError(format!("config key `{key}`: {e}")).into())
            })
            .transpose()
    }

    pub fn raw(&self, key: &str) -> Option<&Value> {
        self.map.get(key)
    }

    /// `flag`, else the config entry `key`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// `flag`, else the config entry `key`, else `default`.
    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> anyhow::Result<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }
}
