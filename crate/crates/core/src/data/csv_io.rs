//! CSV ingestion for the public ETT/Weather/Electricity layout: optional
//! header row, optional leading date column, then one numeric column per
//! variate and one row per timestep.

use std::path::Path;

use crate::error::{Error, Result};

use super::SeriesFrame;

pub fn load_csv(path: &Path, has_header: bool, date_col: bool) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))?;

    let mut variate_names: Vec<String> = Vec::new();
    if has_header {
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("bad header in {}: {e}", path.display())))?;
        let skip = usize::from(date_col);
        variate_names = headers.iter().skip(skip).map(|s| s.to_string()).collect();
    }

    let mut values: Vec<f64> = Vec::new();
    let mut timestamps: Vec<String> = Vec::new();
    let mut n_cols: Option<usize> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Parse(format!("row {row_idx} of {}: {e}", path.display()))
        })?;
        let skip = usize::from(date_col);
        if record.len() <= skip {
            return Err(Error::Parse(format!(
                "row {row_idx} has no data columns after the date column"
            )));
        }
        let data_cols = record.len() - skip;
        match n_cols {
            None => n_cols = Some(data_cols),
            Some(c) if c != data_cols => {
                return Err(Error::Parse(format!(
                    "ragged row {row_idx}: {data_cols} data columns, expected {c}"
                )))
            }
            _ => {}
        }
        if date_col {
            timestamps.push(record[0].to_string());
        }
        for (col_idx, cell) in record.iter().enumerate().skip(skip) {
            let parsed: f64 = cell.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "malformed cell {:?} at ({row_idx}, {col_idx})",
                    cell
                ))
            })?;
            values.push(parsed);
        }
    }

    let n_cols = n_cols.ok_or_else(|| Error::Parse(format!("{} is empty", path.display())))?;
    let n_rows = values.len() / n_cols;
    let mut frame = SeriesFrame::new(values, n_rows, n_cols)?;
    if !variate_names.is_empty() && variate_names.len() == n_cols {
        frame.variate_names = variate_names;
    }
    if date_col {
        frame.timestamps = Some(timestamps);
    }
    Ok(frame)
}
