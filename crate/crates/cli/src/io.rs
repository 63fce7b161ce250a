//! Matrix CSV files: one row per sample, comma separated, optional header.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{data, CliError, CliResult};

#[derive(Debug, Clone)]
pub struct LoadedMatrix {
    pub matrix: DMatrix<f64>,
    pub header: Option<Vec<String>>,
}

pub fn load_matrix_csv(path: &Path, has_header: bool) -> CliResult<LoadedMatrix> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_matrix_csv(file, has_header, &path.display().to_string())
}

/// Parses CSV text; `name` labels error messages.
pub fn parse_matrix_csv<R: Read>(
    reader: R,
    has_header: bool,
    name: &str,
) -> CliResult<LoadedMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = if has_header {
        Some(
            rdr.headers()
                .map_err(|e| CliError::Data(format!("{name}: {e}")))?
                .iter()
                .map(str::to_owned)
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let mut width = header.as_ref().map(Vec::len);

    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return data(format!(
                    "{name}: line {line} has {} fields, expected {w}",
                    record.len()
                ))
            }
            _ => {}
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{name}: line {line}, column {}: cannot parse '{field}' as a number",
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return data(format!(
                    "{name}: line {line}, column {}: non-finite value '{field}'",
                    c + 1
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return data(format!("{name}: no data rows"));
    }
    Ok(LoadedMatrix {
        matrix: DMatrix::from_row_slice(rows, cols, &values),
        header,
    })
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> CliResult<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_float(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
