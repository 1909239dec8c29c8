//! Plain CSV and JSON files. Floats are written in shortest round-trip form.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Shortest text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a header plus preformatted lines.
pub fn write_lines(
    path: &Path,
    header: &[String],
    lines: impl Iterator<Item = String>,
) -> CliResult<()> {
    ensure_parent(path)?;
    let mut out = header.join(",");
    out.push('\n');
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a header plus numeric rows.
pub fn write_table(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> CliResult<()> {
    write_lines(
        path,
        header,
        rows.map(|row| {
            row.iter()
                .map(|&v| fmt_f64(v))
                .collect::<Vec<_>>()
                .join(",")
        }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Appends one line to a log file.
pub fn append_log(path: &Path, line: &str) -> CliResult<()> {
    use std::io::Write;
    ensure_parent(path)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Reads a `t,y` data file.
pub fn read_data(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read data file {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "t,y" {
        return Err(CliError::Config(format!(
            "{}: expected header t,y",
            path.display()
        )));
    }
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse = |s: Option<&str>| -> CliResult<f64> {
            s.and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::Config(format!("{}: bad row {}", path.display(), i + 2)))
        };
        let mut cells = line.split(',');
        t.push(parse(cells.next())?);
        y.push(parse(cells.next())?);
    }
    Ok((t, y))
}
