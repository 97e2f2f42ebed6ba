//! Layered run configuration: built-in defaults, then a JSON config file,
//! then command-line flags. Every effective value is echoed with its source.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Subcommand settings. Keys listed in `PATH_KEYS` hold paths (or lists of
/// paths) that a config file states relative to its own directory.
pub trait Settings: Serialize + DeserializeOwned + Default {
    const PATH_KEYS: &'static [&'static str] = &[];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    Config,
    Cli,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Echo {
    pub value: Value,
    pub source: Source,
}

/// Settings plus the per-key provenance written into every run manifest.
#[derive(Debug)]
pub struct Resolved<T> {
    pub settings: T,
    pub echo: BTreeMap<String, Echo>,
}

fn object(value: Value, what: &str) -> Result<Map<String, Value>, CliError> {
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Config(format!("{what} must be a JSON object"))),
    }
}

fn rebase(value: Value, base: &Path) -> Value {
    match value {
        Value::String(s) if Path::new(&s).is_relative() => Value::String(base.join(s).to_string_lossy().into_owned()),
        Value::Array(items) => Value::Array(items.into_iter().map(|v| rebase(v, base)).collect()),
        other => other,
    }
}

/// Reads the config file section for `command`. A file may hold the keys
/// directly or nest them under the subcommand name.
pub fn read_config_file(path: &Path, command: &str) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let mut map = object(value, "config file")?;
    match map.remove(command) {
        Some(section) => object(section, "config section"),
        None => Ok(map),
    }
}

/// Merges defaults < config file < CLI overrides into `T`. Unknown config
/// keys are rejected; `cli` serializes only the flags that were given.
pub fn resolve<T: Settings>(
    command: &str,
    config: Option<&Path>,
    cli: &impl Serialize,
    global: &[(&str, Option<Value>)],
) -> Result<Resolved<T>, CliError> {
    let defaults = object(serde_json::to_value(T::default()).map_err(|e| CliError::Config(e.to_string()))?, "defaults")?;
    let mut echo: BTreeMap<String, Echo> = defaults.into_iter().map(|(k, value)| (k, Echo { value, source: Source::Default })).collect();

    if let Some(path) = config {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (key, value) in read_config_file(path, command)? {
            let slot =
                echo.get_mut(&key).ok_or_else(|| CliError::Config(format!("unknown key {key:?} in config {} for {command}", path.display())))?;
            let value = if T::PATH_KEYS.contains(&key.as_str()) { rebase(value, &base) } else { value };
            *slot = Echo { value, source: Source::Config };
        }
    }

    let flags = object(serde_json::to_value(cli).map_err(|e| CliError::Config(e.to_string()))?, "flags")?;
    let globals = global.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)));
    for (key, value) in flags.into_iter().chain(globals) {
        if value.is_null() {
            continue;
        }
        if let Some(slot) = echo.get_mut(&key) {
            *slot = Echo { value, source: Source::Cli };
        }
    }

    let merged: Map<String, Value> = echo.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect();
    let settings = serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("invalid {command} settings: {e}")))?;
    Ok(Resolved { settings, echo })
}

/// Resolves `path` against `base` unless it is absolute.
pub fn relative_to(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
