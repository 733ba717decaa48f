//! Report envelopes and file output.

use std::fs;
use std::path::Path;

use landmatch::config::RunConfig;
use landmatch::{Error, Result};
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Wraps a command result with the provenance every report carries.
pub fn envelope(command: &str, config: &RunConfig, result: Value) -> Value {
    json!({
        "command": command,
        "version": VERSION,
        "config_hash": config.hash(),
        "seed": config.seed,
        "result": result,
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// CSV text from a header and preformatted rows.
pub fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn error_json(e: &Error) -> Value {
    let (kind, details): (&str, Vec<String>) = match e {
        Error::Config(list) => ("config", list.clone()),
        Error::Records(list) => ("records", list.iter().map(|(i, m)| format!("[{i}] {m}")).collect()),
        Error::Io { .. } => ("io", Vec::new()),
        Error::Format { .. } => ("format", Vec::new()),
        Error::InvalidArgument(_) => ("invalid_argument", Vec::new()),
        _ => ("runtime", Vec::new()),
    };
    json!({ "error": kind, "message": e.to_string(), "details": details })
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}
