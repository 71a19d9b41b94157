//! CSV tables and JSON sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::experiments::{Report, Row, Table};
use crate::CliError;

pub const CSV_HEADER: &str = "n,order,estimate,se,reference,bias,rel_bias,samples,seconds,seed";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `rows` as CSV with the fixed header.
pub fn write_rows<W: Write>(w: W, rows: &[Row]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        out.write_record(CSV_HEADER.split(',')).map_err(|e| CliError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// CSV path of `table` given the requested output path.
pub fn table_path(out: &Path, table: &Table) -> PathBuf {
    match &table.label {
        None => out.to_path_buf(),
        Some(label) => {
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
            out.with_file_name(format!("{stem}-{label}.csv"))
        }
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".into())
}

pub fn sidecar(cfg: &ExperimentConfig, report: &Report, files: &[PathBuf]) -> serde_json::Value {
    json!({
        "command": report.command,
        "config": cfg,
        "git_revision": git_revision(),
        "timestamp": timestamp(),
        "files": files,
        "details": report.details,
    })
}

/// Writes every table of `report` and its sidecar next to `out`; without
/// `out`, tables go to stdout. Returns the written paths.
pub fn emit(cfg: &ExperimentConfig, report: &Report) -> Result<Vec<PathBuf>, CliError> {
    let Some(out) = &cfg.out else {
        let stdout = std::io::stdout();
        for t in &report.tables {
            if let Some(label) = &t.label {
                writeln!(stdout.lock(), "# {label}").map_err(|e| CliError::Io(e.to_string()))?;
            }
            write_rows(stdout.lock(), &t.rows)?;
        }
        if report.tables.is_empty() {
            let text = serde_json::to_string_pretty(&report.details).unwrap();
            writeln!(stdout.lock(), "{text}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        return Ok(Vec::new());
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut files = Vec::new();
    for t in &report.tables {
        let path = table_path(out, t);
        let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_rows(file, &t.rows)?;
        files.push(path);
    }
    let side = if report.tables.is_empty() { out.clone() } else { sidecar_path(out) };
    let text = serde_json::to_string_pretty(&sidecar(cfg, report, &files)).unwrap();
    std::fs::write(&side, text + "\n").map_err(|e| io_err(&side, e))?;
    files.push(side);
    Ok(files)
}
