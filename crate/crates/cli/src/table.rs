//! Numeric CSV tables: comma separated, header row required.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.index_of(name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| CliError::Usage(format!("missing column '{name}'")))
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    parse_table(file, &path.display().to_string())
}

pub fn parse_table<R: io::Read>(input: R, label: &str) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(label, &e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("{label}: header row has an empty column name")));
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(CliError::Usage(format!("{label}: duplicate column '{n}'")));
        }
    }
    let mut columns = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record.map_err(|e| malformed(label, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "{label}: line {line}: column '{}' has non-numeric value '{cell}'",
                    names[j]
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Usage(format!(
                    "{label}: line {line}: column '{}' is not finite",
                    names[j]
                )));
            }
            columns[j].push(value);
        }
    }
    if columns[0].is_empty() {
        return Err(CliError::Usage(format!("{label}: no data rows")));
    }
    Ok(Table { names, columns })
}

fn malformed(label: &str, e: &csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::Usage(format!("{label}: line {}: {}", p.line(), kind_message(e))),
        None => CliError::Usage(format!("{label}: {e}")),
    }
}

fn kind_message(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        csv::ErrorKind::Utf8 { .. } => "invalid UTF-8".into(),
        _ => e.to_string(),
    }
}

/// Writes to `path`, or to standard output when `None`.
pub fn write_table(path: Option<&Path>, names: &[String], columns: &[Vec<f64>]) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            Box::new(File::create(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let rows = columns.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(names).map_err(io_error)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c[i].to_string()))
            .map_err(io_error)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Writes string records, header first.
pub fn write_records(path: Option<&Path>, records: &[Vec<String>]) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            Box::new(File::create(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in records {
        w.write_record(r).map_err(io_error)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

fn io_error(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}
