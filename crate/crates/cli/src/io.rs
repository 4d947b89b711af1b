use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Reads a single numeric column; a non-numeric first row is taken as a header.
pub fn read_series(path: &Path) -> CliResult<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut values = Vec::new();
    let mut first = true;
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = rec.iter().collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        if fields.len() != 1 {
            return Err(CliError::Csv {
                line,
                message: format!("expected one column, found {}", fields.len()),
            });
        }
        let field = fields[0];
        let lower = field.to_ascii_lowercase();
        if matches!(lower.as_str(), "na" | "nan" | "null" | "n/a" | "none" | "") {
            return Err(CliError::Csv {
                line,
                message: format!("missing value '{field}'; impute or remove it before estimation"),
            });
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => {
                return Err(CliError::Csv {
                    line,
                    message: format!("non-finite value '{field}'"),
                })
            }
            Err(_) if first => {}
            Err(_) => {
                return Err(CliError::Csv {
                    line,
                    message: format!("'{field}' is not a number"),
                })
            }
        }
        first = false;
    }
    if values.is_empty() {
        return Err(CliError::Csv {
            line: 0,
            message: "no numeric values found".into(),
        });
    }
    Ok(values)
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.flush().map_err(|e| CliError::io(tmp.path(), e))?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Usage(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    write_atomic(dir, name, &bytes)
}

/// Writes a CSV with a header row; `None` cells are left empty.
pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| CliError::Usage(format!("CSV encoding failed: {e}"));
    w.write_record(header).map_err(map)?;
    for r in rows {
        w.write_record(r).map_err(map)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("CSV encoding failed: {e}")))?;
    write_atomic(dir, name, &bytes)
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
