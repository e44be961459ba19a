//! Shared helpers for the tab-separated formats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Escape tab, newline, carriage return and backslash.
pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape`]. Unknown or dangling escapes are rejected.
pub fn unescape(field: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape sequence \\{other}")),
            None => return Err("dangling backslash at end of field".to_string()),
        }
    }
    Ok(out)
}

/// A data row with its 1-based line number in the source file.
pub(crate) struct Row {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Read a headered TSV file, checking the header exactly and splitting every
/// non-empty data row into unescaped fields of the expected arity.
pub(crate) fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Row>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let expected = header.join("\t");
    match lines.next() {
        Some((_, first)) if first.trim_end_matches('\r') == expected => {}
        Some((_, first)) => {
            return Err(Error::parse(
                path,
                1,
                format!("unexpected header {first:?}, expected {expected:?}"),
            ))
        }
        None => return Err(Error::parse(path, 1, "missing header row")),
    }

    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} columns, found {}", header.len(), cols.len()),
            ));
        }
        let fields = cols
            .into_iter()
            .map(unescape)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| Error::parse(path, line, m))?;
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
