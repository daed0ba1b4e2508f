//! Layered option resolution: command-line flag, then JSON config file,
//! then built-in default. Config keys are the long flag names.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Layers {
    file: Map<String, Value>,
    source: String,
}

impl Layers {
    /// Reads `path` (if any), rejecting keys that are not flags of the
    /// subcommand.
    pub fn load(path: Option<&Path>, known: &BTreeSet<String>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Layers::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(file) = value else {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        };
        if let Some(bad) = file.keys().find(|k| !known.contains(k.as_str())) {
            return Err(CliError::Usage(format!(
                "config {}: unknown key {bad:?}",
                path.display()
            )));
        }
        Ok(Layers {
            file,
            source: path.display().to_string(),
        })
    }

    /// Flag value if given, else the config value, else `None`.
    pub fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config {}: bad value for {key:?}: {e}", self.source))),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// Like [`get`](Self::get) but the option must end up set.
    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.get(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn known(keys: &[&str]) -> BTreeSet<String> {
        keys.iter().map(|k| k.to_string()).collect()
    }

    fn layers(json: &str, keys: &[&str]) -> Result<Layers, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, json).unwrap();
        Layers::load(Some(&path), &known(keys))
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let l = layers(r#"{"lr": 0.5, "epochs": 7}"#, &["lr", "epochs", "seed"]).unwrap();
        assert_eq!(l.or(Some(0.1), "lr", 1e-4).unwrap(), 0.1);
        assert_eq!(l.or(None, "lr", 1e-4).unwrap(), 0.5);
        assert_eq!(l.or::<usize>(None, "epochs", 300).unwrap(), 7);
        assert_eq!(l.or::<u64>(None, "seed", 3).unwrap(), 3);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(layers(r#"{"lrr": 1}"#, &["lr"]), Err(CliError::Usage(_))));
        assert!(matches!(layers("[1]", &["lr"]), Err(CliError::Usage(_))));
    }

    #[test]
    fn wrong_type_is_a_usage_error() {
        let l = layers(r#"{"epochs": "many"}"#, &["epochs"]).unwrap();
        assert!(matches!(l.or::<usize>(None, "epochs", 1), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_required() {
        let l = Layers::default();
        assert!(matches!(l.require::<PathBuf>(None, "out"), Err(CliError::Usage(_))));
    }
}
