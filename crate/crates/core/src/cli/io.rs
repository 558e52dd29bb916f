//! Data CSV ingestion and numeric CSV output.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), which parse
//! back to the same `f64`.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a `t,y` CSV. `t` must be non-decreasing and inside `domain`.
pub fn read_data_csv(path: &Path, domain: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::Data {
        line: 0,
        message: format!("cannot open {}: {e}", path.display()),
    })?;
    parse_data(file, domain)
}

pub fn parse_data<R: std::io::Read>(reader: R, domain: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    let data_err = |line: u64, message: String| Error::Data {
        line: line as usize,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(data_err(1, "empty file".into()));
    }
    if header.len() != 2 || &header[0] != "t" || &header[1] != "y" {
        return Err(data_err(1, format!("expected header `t,y`, found `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let (a, b) = domain;
    let mut t = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            data_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| data_err(line, format!("{name} = `{}` is not a number", &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(data_err(line, format!("{name} is not finite")))
            }
        };
        let ti = num(0, "t")?;
        let yi = num(1, "y")?;
        if ti < a || ti > b {
            return Err(data_err(line, format!("t = {ti} lies outside the domain [{a}, {b}]")));
        }
        if let Some(&prev) = t.last() {
            if ti < prev {
                return Err(data_err(line, format!("t = {ti} is smaller than the previous t = {prev}")));
            }
        }
        t.push(ti);
        y.push(yi);
    }
    if t.is_empty() {
        return Err(data_err(2, "no observations".into()));
    }
    Ok((t, y))
}

/// Writes a numeric table with the given header.
pub fn write_csv<'a, I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(header).map_err(csv_io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_num(*v))).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of preformatted fields.
pub fn write_text_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(header).map_err(csv_io)?;
    for row in rows {
        w.write_record(row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV written by [`write_csv`].
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_io)?;
    let header = rdr.headers().map_err(csv_io)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_io)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0) as usize;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Data {
                    line,
                    message: format!("`{s}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Numerical(format!("{other:?}")),
    }
}
