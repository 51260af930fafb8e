//! Merges a TOML settings file with command-line flags.
//!
//! Every flag struct doubles as the schema of its settings file: keys are
//! the flag names in snake_case (kebab-case is accepted too). A flag given on
//! the command line wins over the file. Relative paths in a file resolve
//! against the file's directory.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

fn object<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v).expect("flag structs serialize") {
        Value::Object(m) => m,
        _ => unreachable!("flag structs are objects"),
    }
}

/// Reads `path` as a flat table of settings, checked against the keys of `T`.
pub fn read_file<T: Serialize + Default>(path: &Path, path_keys: &[&str]) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let known = object(&T::default());
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Map::new();
    for (key, value) in table {
        let key = key.replace('-', "_");
        if !known.contains_key(&key) {
            return Err(CliError::usage(format!("{}: unknown setting `{key}`", path.display())));
        }
        let mut value = serde_json::to_value(value).map_err(|e| CliError::usage(e.to_string()))?;
        if path_keys.contains(&key.as_str()) {
            if let Value::String(s) = &value {
                if Path::new(s).is_relative() {
                    value = Value::String(base.join(s).to_string_lossy().into_owned());
                }
            }
        }
        out.insert(key, value);
    }
    Ok(out)
}

/// Lays the flags that were given over `base`.
pub fn overlay<T: Serialize>(mut base: Map<String, Value>, flags: &T) -> Map<String, Value> {
    for (k, v) in object(flags) {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    base
}

pub fn into_typed<T: DeserializeOwned>(m: Map<String, Value>, source: &str) -> CliResult<T> {
    serde_json::from_value(Value::Object(m)).map_err(|e| CliError::usage(format!("{source}: {e}")))
}

/// The flags merged over the optional settings file.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(flags: &T, file: Option<&Path>, path_keys: &[&str]) -> CliResult<T> {
    let base = match file {
        Some(p) => read_file::<T>(p, path_keys)?,
        None => Map::new(),
    };
    let source = file.map_or("flags".to_owned(), |p| p.display().to_string());
    into_typed(overlay(base, flags), &source)
}

/// Parses a flag value through its serde representation, so flags accept
/// exactly the spellings settings files do.
pub fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Writes `run.json`: the command and its fully resolved settings.
pub fn write_run_json<T: Serialize>(dir: &Path, command: &str, settings: &T) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
    });
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    struct Flags {
        lambda: Option<f64>,
        dfm: Option<String>,
        batch_size: Option<usize>,
    }

    #[test]
    fn flags_win_and_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "lambda = 0.5\ndfm = \"data/a.dfm\"\nbatch-size = 10\n").unwrap();
        let flags = Flags {
            lambda: Some(0.1),
            ..Flags::default()
        };
        let got: Flags = resolve(&flags, Some(&p), &["dfm"]).unwrap();
        assert_eq!(got.lambda, Some(0.1));
        assert_eq!(got.batch_size, Some(10));
        assert_eq!(got.dfm.unwrap(), dir.path().join("data/a.dfm").to_string_lossy());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "lamda = 0.5\n").unwrap();
        let err = resolve::<Flags>(&Flags::default(), Some(&p), &[]).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("lamda"));
    }
}
