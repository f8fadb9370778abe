//! CSV ingestion, artifact writing and hashing.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with object keys in sorted order, newline-terminated.
pub fn to_sorted_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::input(e.to_string()))?;
    v.sort_all_objects();
    let mut out = serde_json::to_vec_pretty(&v).map_err(|e| CliError::input(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, &to_sorted_json(value)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// A parsed CSV: data rows with their 1-based line numbers.
pub struct Table {
    path: String,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    /// Reads a CSV whose header must equal `header`.
    pub fn read(path: &Path, header: &[&str]) -> CliResult<Self> {
        let shown = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::input(format!("{shown}: {e}")))?;
        let found = reader
            .headers()
            .map_err(|e| CliError::input(format!("{shown}: {e}")))?;
        if found.iter().collect::<Vec<_>>() != header {
            return Err(CliError::input(format!(
                "{shown}: expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CliError::input(format!("{shown}: {e}")))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record.iter().map(str::to_owned).collect()));
        }
        Ok(Self { path: shown, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(move |(line, cells)| Row {
            path: &self.path,
            line: *line,
            cells,
        })
    }
}

pub struct Row<'a> {
    path: &'a str,
    pub line: u64,
    cells: &'a [String],
}

impl Row<'_> {
    pub fn text(&self, column: usize) -> &str {
        &self.cells[column]
    }

    pub fn number(&self, column: usize, name: &str) -> CliResult<f64> {
        let cell = &self.cells[column];
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(column, name, cell, "a finite number"))
    }

    pub fn index(&self, column: usize, name: &str) -> CliResult<usize> {
        let cell = &self.cells[column];
        cell.parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| self.error(column, name, cell, "a positive integer"))
    }

    fn error(&self, column: usize, name: &str, cell: &str, wanted: &str) -> CliError {
        CliError::input(format!(
            "{}: line {}, column {} (`{name}`): expected {wanted}, found `{cell}`",
            self.path,
            self.line,
            column + 1
        ))
    }

    pub fn fail(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::input(format!("{}: line {}: {msg}", self.path, self.line))
    }
}

/// Day-by-hour values from a `date,hour,<value>` table, days in order of first appearance.
pub fn read_daily(path: &Path, value: &str) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let table = Table::read(path, &["date", "hour", value])?;
    let mut dates: Vec<String> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for row in table.rows() {
        let hour = row.index(1, "hour")?;
        let v = row.number(2, value)?;
        let date = row.text(0);
        let d = match dates.iter().position(|x| x == date) {
            Some(d) => d,
            None => {
                dates.push(date.to_owned());
                cells.push(Vec::new());
                dates.len() - 1
            }
        };
        let day = &mut cells[d];
        if day.len() < hour {
            day.resize(hour, None);
        }
        if day[hour - 1].replace(v).is_some() {
            return Err(row.fail(format!("duplicate hour {hour} on {date}")));
        }
    }
    let hours = cells.iter().map(Vec::len).max().unwrap_or(0);
    if hours == 0 {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let mut out = Vec::with_capacity(cells.len());
    for (date, day) in dates.iter().zip(cells) {
        let mut full = Vec::with_capacity(hours);
        for h in 0..hours {
            match day.get(h).copied().flatten() {
                Some(v) => full.push(v),
                None => {
                    return Err(CliError::input(format!(
                        "{}: {date} has no row for hour {}",
                        path.display(),
                        h + 1
                    )))
                }
            }
        }
        out.push(full);
    }
    Ok((dates, out))
}

/// Per-hour rows from an `hour,<columns...>` table covering hours `1..=hours` exactly once.
pub fn read_hourly(path: &Path, columns: &[&str], hours: usize) -> CliResult<Vec<Vec<f64>>> {
    let mut header = vec!["hour"];
    header.extend_from_slice(columns);
    let table = Table::read(path, &header)?;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; hours];
    for row in table.rows() {
        let hour = row.index(0, "hour")?;
        if hour > hours {
            return Err(row.fail(format!("hour {hour} beyond the {hours}-hour horizon")));
        }
        let values = columns
            .iter()
            .enumerate()
            .map(|(i, name)| row.number(i + 1, name))
            .collect::<CliResult<Vec<f64>>>()?;
        if out[hour - 1].replace(values).is_some() {
            return Err(row.fail(format!("duplicate hour {hour}")));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(h, v)| {
            v.ok_or_else(|| CliError::input(format!("{}: missing hour {}", path.display(), h + 1)))
        })
        .collect()
}

/// Long-format CSV builder with lossless float formatting.
pub struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header)
            .map_err(|e| CliError::input(e.to_string()))?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, cells: &[String]) -> CliResult<()> {
        self.writer
            .write_record(cells)
            .map_err(|e| CliError::input(e.to_string()))
    }

    pub fn write(self, path: &Path) -> CliResult<()> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| CliError::input(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}
