//! Effective configurations: defaults, then the JSON file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flag overrides addressed by dotted paths such as `reward.k`.
#[derive(Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set<T: Into<Value>>(&mut self, path: &'static str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((path, v.into()));
        }
        self
    }

    pub fn set_f64(&mut self, path: &'static str, value: Option<f64>) -> &mut Self {
        if let Some(v) = value {
            let n = serde_json::Number::from_f64(v).map(Value::Number);
            self.0.push((path, n.unwrap_or(Value::Null)));
        }
        self
    }

    fn into_value(self) -> Value {
        let mut root = Value::Object(Map::new());
        for (path, v) in self.0 {
            let mut patch = v;
            for key in path.rsplit('.') {
                let mut m = Map::new();
                m.insert(key.to_string(), patch);
                patch = Value::Object(m);
            }
            merge(&mut root, patch);
        }
        root
    }
}

pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    Ok(value)
}

/// Builds `T` from its defaults, the config file (if any) and the flags.
pub fn effective<T>(file: Option<&Path>, overrides: Overrides) -> Result<T, CliError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(T::default()).expect("config serializes");
    if let Some(path) = file {
        merge(&mut value, read_config_file(path)?);
    }
    merge(&mut value, overrides.into_value());
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("config: {e}")))
}
