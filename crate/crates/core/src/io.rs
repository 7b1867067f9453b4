//! Long-format CSV ingestion and bit-stable number formatting.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fpca::{FunctionalDataset, Subject};

/// Token written for undefined values.
pub const NA: &str = "NA";

/// Formats a double with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Like [`fmt_f64`], with `None` and non-finite values written as `NA`.
pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => fmt_f64(x),
        _ => NA.to_string(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { row, message: format!("{other:?}") },
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Schema { column: name.to_string() })
}

fn parse_cell(record: &csv::StringRecord, idx: usize, name: &str) -> Result<f64> {
    let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
    let cell = record.get(idx).unwrap_or("");
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column \"{name}\": \"{cell}\" is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, message: format!("column \"{name}\": non-finite value \"{cell}\"") });
    }
    Ok(v)
}

/// Reads a `subject_id,t,y` file (header names case-insensitive).
///
/// Subjects appear in order of first occurrence; each subject's points are
/// stably sorted by `t`. The domain is the range of all abscissae.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<FunctionalDataset> {
    let mut reader = open_reader(path.as_ref())?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let id_col = column_index(&headers, "subject_id")?;
    let t_col = column_index(&headers, "t")?;
    let y_col = column_index(&headers, "y")?;

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut points: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse { row, message: "empty subject_id".into() });
        }
        let t = parse_cell(&record, t_col, "t")?;
        let y = parse_cell(&record, y_col, "y")?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            points.push((id, Vec::new()));
            points.len() - 1
        });
        points[slot].1.push((t, y));
    }
    if points.is_empty() {
        return Err(Error::DataValidation("no data rows".into()));
    }
    let mut subjects = Vec::with_capacity(points.len());
    for (id, mut pts) in points {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateAbscissa { subject: id, t: w[0].0 });
        }
        let (t, y) = pts.into_iter().unzip();
        subjects.push(Subject::new(id, t, y));
    }
    FunctionalDataset::new(subjects)
}

/// Reads a `t,y` scatterplot file, keeping row order.
pub fn ingest_xy_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = open_reader(path.as_ref())?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let t_col = column_index(&headers, "t")?;
    let y_col = column_index(&headers, "y")?;
    let mut t = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        t.push(parse_cell(&record, t_col, "t")?);
        y.push(parse_cell(&record, y_col, "y")?);
    }
    if t.is_empty() {
        return Err(Error::DataValidation("no data rows".into()));
    }
    Ok((t, y))
}

/// Writes a CSV table whose cells are already formatted.
pub fn write_table<I>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut writer = csv::WriterBuilder::new().from_path(path.as_ref()).map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a dataset in `subject_id,t,y` long format.
pub fn write_csv(path: impl AsRef<Path>, data: &FunctionalDataset) -> Result<()> {
    let rows = data.subjects().iter().flat_map(|s| {
        s.t.iter()
            .zip(&s.y)
            .map(move |(t, y)| vec![s.id.clone(), fmt_f64(*t), fmt_f64(*y)])
    });
    write_table(path, &["subject_id", "t", "y"], rows)
}

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json(path: impl AsRef<Path>, value: &serde_json::Value) -> Result<()> {
    let mut file = File::create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}
