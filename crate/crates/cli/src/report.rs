use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Cli;

/// Bumped whenever a report's fields change meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// `{"schema": "cvip.<kind>", "schema_version": 1, ...body}`.
pub fn envelope(kind: &str, body: &impl Serialize) -> Result<Value> {
    let mut out = Map::new();
    out.insert("schema".into(), Value::String(format!("cvip.{kind}")));
    out.insert("schema_version".into(), SCHEMA_VERSION.into());
    match serde_json::to_value(body)? {
        Value::Object(fields) => out.extend(fields),
        other => {
            out.insert("result".into(), other);
        }
    }
    Ok(Value::Object(out))
}

/// Prints the report (JSON, or `table` under `--pretty`) and writes it to
/// `--report` when given.
pub fn emit(cli: &Cli, kind: &str, body: &impl Serialize, table: impl FnOnce() -> String) -> Result<()> {
    let json = envelope(kind, body)?;
    if let Some(path) = &cli.report {
        let text = serde_json::to_string_pretty(&json)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if cli.pretty {
        print!("{}", table());
    } else {
        println!("{json}");
    }
    Ok(())
}

/// Left-aligned two-column table.
pub fn table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

/// One line on stderr with everything a run was configured with.
pub fn log_config(cli: &Cli, seed: Option<u64>) {
    let line = serde_json::json!({
        "event": "config",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "threads": rayon::current_num_threads(),
        "cli": cli,
    });
    eprintln!("{line}");
}
