//! `{"name": ..., "params": {...}}` family specifications shared by the step
//! law and test-function catalogs.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// A named catalog entry with free-form numeric parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl FamilySpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

/// Typed reader over a parameter map that remembers which keys were used.
pub(crate) struct Params<'a> {
    family: &'a str,
    map: &'a Map<String, Value>,
    used: Vec<&'a str>,
}

impl<'a> Params<'a> {
    pub fn new(spec: &'a FamilySpec) -> Self {
        Self {
            family: &spec.name,
            map: &spec.params,
            used: Vec::new(),
        }
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::InvalidParameter {
            family: self.family.to_string(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, key: &'a str) -> Option<&'a Value> {
        self.used.push(key);
        self.map.get(key)
    }

    pub fn f64(&mut self, key: &'a str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.error(format!("`{key}` must be a finite number"))),
        }
    }

    pub fn usize(&mut self, key: &'a str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| self.error(format!("`{key}` must be a non-negative integer"))),
        }
    }

    pub fn matrix(&mut self, key: &'a str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value::<Vec<Vec<f64>>>(v.clone())
                .map(Some)
                .map_err(|_| self.error(format!("`{key}` must be an array of numeric arrays"))),
        }
    }

    pub fn vector(&mut self, key: &'a str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value::<Vec<f64>>(v.clone())
                .map(Some)
                .map_err(|_| self.error(format!("`{key}` must be an array of numbers"))),
        }
    }

    pub fn list(&mut self, key: &'a str) -> Option<&'a Vec<Value>> {
        self.take(key).and_then(Value::as_array)
    }

    /// Rejects keys that were never read.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self
            .map
            .keys()
            .filter(|k| !self.used.contains(&k.as_str()))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(self.error(format!("unknown parameter(s) {unknown:?}")))
        }
    }
}
