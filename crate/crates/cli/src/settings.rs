//! Three-layer configuration: profile defaults, then the TOML file, then
//! command-line flags.

use std::path::PathBuf;

use anyhow::Context;
use rarefsl::config::{Profile, RunConfig};
use serde_json::{Map, Value};

use crate::artifacts::UsageError;
use crate::GlobalArgs;

/// Parses a `--set` value as a TOML scalar or array, falling back to a
/// bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn insert_path(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), UsageError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(UsageError(format!("malformed setting key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let slot = node.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = slot
            .as_object_mut()
            .ok_or_else(|| UsageError(format!("`{part}` in `{key}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn read_file(path: &PathBuf) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    match serde_json::to_value(table)? {
        Value::Object(map) => Ok(map),
        _ => unreachable!("a TOML table serializes to an object"),
    }
}

pub fn load(args: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut overlay = match &args.config {
        Some(path) => read_file(path)?,
        None => Map::new(),
    };
    for set in &args.sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got `{set}`")))?;
        insert_path(&mut overlay, key.trim(), parse_value(raw.trim()))?;
    }
    if let Some(seed) = args.seed {
        overlay.insert("seed".into(), seed.into());
    }
    if let Some(out) = &args.out {
        overlay.insert("output_dir".into(), out.to_string_lossy().into_owned().into());
    }
    let profile_name = match (&args.profile, overlay.get("profile")) {
        (Some(p), _) => p.clone(),
        (None, Some(Value::String(p))) => p.clone(),
        (None, Some(other)) => return Err(UsageError(format!("profile must be a string, got {other}")).into()),
        (None, None) => "desk".into(),
    };
    let profile: Profile = profile_name.parse().map_err(|e| UsageError(format!("{e}")))?;
    let config = RunConfig::layered(profile, &Value::Object(overlay)).map_err(|e| UsageError(e.to_string()))?;
    config.validate().map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
    Ok(config)
}
