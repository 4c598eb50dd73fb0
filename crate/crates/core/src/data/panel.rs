use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;

/// Fraction of rows treated as the training range during ingestion.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Synchronized readings: one row per time step, one column per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T> {
    /// `T × N`
    pub values: Matrix<T>,
    /// Instants in seconds (or raw ticks for integer stamps).
    pub timestamps: Vec<i64>,
    /// Timestamp text as read, reused when writing the panel back out.
    pub labels: Vec<String>,
    pub sensor_ids: Vec<String>,
    /// Spacing between consecutive timestamps.
    pub time_unit: i64,
    /// Cells filled during ingestion.
    pub imputed: usize,
}

impl<T: Scalar> Panel<T> {
    /// Panel with integer tick stamps `0..T`.
    pub fn from_values(values: Matrix<T>, sensor_ids: Vec<String>) -> Result<Self> {
        if sensor_ids.len() != values.cols() {
            return Err(Error::contract(format!(
                "{} sensor ids for {} columns",
                sensor_ids.len(),
                values.cols()
            )));
        }
        let len = values.rows();
        Ok(Self {
            values,
            timestamps: (0..len as i64).collect(),
            labels: (0..len).map(|t| t.to_string()).collect(),
            sensor_ids,
            time_unit: 1,
            imputed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn sensors(&self) -> usize {
        self.values.cols()
    }

    pub fn series(&self, sensor: usize) -> Vec<T> {
        self.values.col(sensor)
    }

    pub fn cast<U: Scalar>(&self) -> Panel<U> {
        Panel {
            values: self.values.cast(),
            timestamps: self.timestamps.clone(),
            labels: self.labels.clone(),
            sensor_ids: self.sensor_ids.clone(),
            time_unit: self.time_unit,
            imputed: self.imputed,
        }
    }

    /// Writes `timestamp,<sensor ids>` followed by one row per step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let map = |e: csv::Error| Error::Io {
            path: "<panel csv>".into(),
            source: e.into(),
        };
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.sensor_ids.iter().cloned());
        w.write_record(&header).map_err(map)?;
        for t in 0..self.len() {
            let mut rec = vec![self.labels[t].clone()];
            rec.extend(self.values.row(t).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&rec).map_err(map)?;
        }
        w.flush().map_err(|e| Error::io("<panel csv>", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

/// Parses a timestamp cell: an integer tick, RFC 3339, or a plain date/time.
pub fn parse_timestamp(cell: &str) -> Option<i64> {
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(cell) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Reads a panel CSV: a header `timestamp,<sensor ids>` and one row per step.
///
/// Empty or `NA`/`NaN`/`null` cells are forward-filled; gaps at the start of
/// a series take the sensor's mean over the leading 70% of rows. Row numbers
/// in errors are 1-based file lines (the header is line 1).
pub fn read_panel<R: Read>(input: R, source: &Path) -> Result<Panel<f64>> {
    let err = |row: usize, msg: String| Error::Ingestion {
        path: source.display().to_string(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(err(1, e.to_string())),
        None => return Err(err(1, "file is empty".into())),
    };
    if header.len() < 2 {
        return Err(err(1, "header needs a timestamp column and at least one sensor".into()));
    }
    let sensor_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    for (i, id) in sensor_ids.iter().enumerate() {
        if id.is_empty() {
            return Err(err(1, format!("sensor column {} has an empty id", i + 1)));
        }
        if sensor_ids[..i].contains(id) {
            return Err(err(1, format!("duplicate sensor id `{id}`")));
        }
    }
    let n = sensor_ids.len();

    let mut labels = Vec::new();
    let mut timestamps: Vec<i64> = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        if rec.len() != n + 1 {
            return Err(err(row, format!("expected {} fields, found {}", n + 1, rec.len())));
        }
        let stamp = &rec[0];
        let ts = parse_timestamp(stamp).ok_or_else(|| err(row, format!("unparseable timestamp `{stamp}`")))?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(err(row, format!("timestamp `{stamp}` is not after the previous row")));
            }
            if timestamps.len() >= 2 {
                let unit = timestamps[1] - timestamps[0];
                if ts - prev != unit {
                    return Err(err(
                        row,
                        format!("timestamp `{stamp}` breaks the sampling period of {unit}"),
                    ));
                }
            }
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if is_missing(cell) {
                cells.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    err(row, format!("unparseable value `{cell}` for sensor `{}`", sensor_ids[j]))
                })?;
                if !v.is_finite() {
                    return Err(err(row, format!("non-finite value `{cell}`")));
                }
                cells.push(Some(v));
            }
        }
        labels.push(stamp.to_string());
        timestamps.push(ts);
    }
    let len = timestamps.len();
    if len == 0 {
        return Err(err(2, "no data rows".into()));
    }

    let train_rows = ((len as f64 * TRAIN_FRACTION).floor() as usize).max(1);
    let mut values = Matrix::zeros(len, n);
    let mut imputed = 0;
    for j in 0..n {
        let observed: Vec<f64> = (0..train_rows).filter_map(|t| cells[t * n + j]).collect();
        let mut last: Option<f64> = None;
        for t in 0..len {
            let v = match cells[t * n + j] {
                Some(v) => v,
                None => {
                    imputed += 1;
                    match last {
                        Some(v) => v,
                        None if !observed.is_empty() => observed.iter().sum::<f64>() / observed.len() as f64,
                        None => {
                            return Err(err(
                                t + 2,
                                format!("sensor `{}` has no observations in the training range", sensor_ids[j]),
                            ))
                        }
                    }
                }
            };
            values[(t, j)] = v;
            last = Some(v);
        }
    }
    let time_unit = if len >= 2 { timestamps[1] - timestamps[0] } else { 1 };
    Ok(Panel {
        values,
        timestamps,
        labels,
        sensor_ids,
        time_unit,
        imputed,
    })
}

pub fn load_csv(path: &Path) -> Result<Panel<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(std::io::BufReader::new(file), path)
}
