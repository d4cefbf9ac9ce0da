use std::fs;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Flattens a JSON value into `(path, value)` pairs, paths joined by `.`.
fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let join = |key: &str| {
        if prefix.is_empty() {
            key.to_string()
        } else {
            format!("{prefix}.{key}")
        }
    };
    match value {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

pub fn render(report: &impl Serialize, format: Format) -> Result<String, Failure> {
    let value = serde_json::to_value(report).map_err(|e| Failure::internal(e.to_string()))?;
    match format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&value).map_err(|e| Failure::internal(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", &value, &mut rows);
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer
                .write_record(["key", "value"])
                .and_then(|_| rows.iter().try_for_each(|(k, v)| writer.write_record([k, v])))
                .map_err(|e| Failure::internal(e.to_string()))?;
            let bytes = writer.into_inner().map_err(|e| Failure::internal(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Failure::internal(e.to_string()))
        }
    }
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::internal(e.to_string())),
    }
}
