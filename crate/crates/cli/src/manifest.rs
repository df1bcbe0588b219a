//! Per-run manifest: the resolved configuration written next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

/// `<output>.manifest.json`.
pub fn path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn path_str(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Writes the manifest for a run whose primary artifact is `output`.
/// No timestamps, so reruns produce identical bytes.
pub fn write(output: &Path, command: &str, config: Value, results: Value) -> Result<PathBuf> {
    let doc = json!({
        "tool": "stresnet",
        "version": env!("CARGO_PKG_VERSION"),
        "final_relu": stresnet::model::FINAL_RELU,
        "command": command,
        "config": config,
        "results": results,
    });
    let path = path_for(output);
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(path)
}
