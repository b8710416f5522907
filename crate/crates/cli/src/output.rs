//! CSV emission and re-parsing.
//!
//! Files carry a mandatory header row, RFC-4180-style quoting, and floats
//! printed with 12 significant digits. Writes go through a sibling temp file
//! plus rename, so a crash never leaves a half-written artifact, and the
//! bodies contain nothing run-dependent: identical inputs give byte-identical
//! files.

use std::fs;
use std::io;
use std::path::Path;

/// Formats with 12 significant digits, positional where readable.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..=15).contains(&exp) {
        return format!("{x:.11e}");
    }
    let decimals = (11 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a CSV atomically (temp file in the same directory, then rename).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut body = String::new();
    body.push_str(&header.iter().map(|h| field(h)).collect::<Vec<_>>().join(","));
    body.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        body.push_str(&row.iter().map(|c| field(c)).collect::<Vec<_>>().join(","));
        body.push('\n');
    }
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, body)?;
    fs::rename(&tmp, path)
}

/// Reads a CSV written by [`write_csv`]: header plus rows.
pub fn read_csv(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut cell = String::new();
    let mut quoted = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if quoted {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    cell.push('"');
                    chars.next();
                }
                '"' => quoted = false,
                other => cell.push(other),
            }
        } else {
            match c {
                '"' => quoted = true,
                ',' => record.push(std::mem::take(&mut cell)),
                '\n' => {
                    record.push(std::mem::take(&mut cell));
                    records.push(std::mem::take(&mut record));
                }
                '\r' => {}
                other => cell.push(other),
            }
        }
    }
    if !cell.is_empty() || !record.is_empty() {
        record.push(cell);
        records.push(record);
    }
    if records.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "empty csv"));
    }
    let header = records.remove(0);
    Ok((header, records))
}
