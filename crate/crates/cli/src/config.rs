//! Scenario files and command-line overrides.

use std::path::Path;

use ssa_mpc::sim::Scenario;
use toml::Value;

use crate::CliError;

const BUNDLED: [(&str, &str); 3] = [
    ("case1", include_str!("../scenarios/case1.toml")),
    ("case2", include_str!("../scenarios/case2.toml")),
    ("case3", include_str!("../scenarios/case3.toml")),
];

/// Text of a bundled scenario, by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Reads `name` as a file path, or as a bundled scenario name when no such file exists.
pub fn scenario_source(name: &str) -> Result<String, CliError> {
    let path = Path::new(name);
    if path.exists() {
        return std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {name}: {e}")));
    }
    bundled(name).map(str::to_string).ok_or_else(|| {
        CliError::Usage(format!("scenario {name} is neither a file nor one of case1, case2, case3"))
    })
}

/// Parses scenario TOML, applies `key=value` overrides and validates the result.
///
/// Missing keys take the case 1 defaults; unknown keys are rejected.
pub fn resolve(source: &str, overrides: &[String]) -> Result<Scenario, CliError> {
    let mut root: Value = toml::from_str(source).map_err(|e| CliError::Usage(format!("scenario: {e}")))?;
    for item in overrides {
        apply_override(&mut root, item)?;
    }
    let scenario: Scenario = root
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("scenario: {}", e.message())))?;
    Ok(scenario)
}

fn parse_value(text: &str) -> Value {
    // Parse as a TOML value; anything that is not one is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

pub fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key}: {part} is not a section")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Usage(format!("override {key}: parent is not a section")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn to_toml(s: &Scenario) -> Result<String, CliError> {
    toml::to_string(s).map_err(|e| CliError::Internal(format!("serializing scenario: {e}")))
}
