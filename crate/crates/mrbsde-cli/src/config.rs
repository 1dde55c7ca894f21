//! Scenario file loading, dotted-path overrides, content digests.

use anyhow::{bail, Context, Result};
use mrbsde::Scenario;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Loads a scenario JSON document, applying `--set key=value` overrides
/// (dotted paths into the raw document) and an optional seed override.
pub fn load_scenario(path: &Path, sets: &[String], seed: Option<u64>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario file {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| "parsing scenario JSON")?;
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .with_context(|| format!("override '{set}' is not of the form key=value"))?;
        apply_override(&mut value, key, raw)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut value, "paths.seed", &seed.to_string())?;
    }
    let scenario: Scenario =
        serde_json::from_value(value).with_context(|| "scenario document has invalid shape")?;
    Ok(scenario)
}

/// Sets a dotted-path key in a JSON document. The value is parsed as JSON
/// when possible and falls back to a plain string.
pub fn apply_override(value: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .with_context(|| format!("override path '{key}' crosses a non-object at '{part}'"))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    bail!("empty override key")
}

/// Content hash of the parsed scenario. Hashing the canonical typed
/// serialization makes the digest stable across reformatting of the file.
pub fn scenario_digest(scenario: &Scenario) -> String {
    let canonical = serde_json::to_string(scenario).expect("scenario serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
