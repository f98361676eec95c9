use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dataset, EventType};
use crate::error::{MtfsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Rul,
    FailureType,
    Stratum,
    EventTime,
    EventType,
    Ignore,
}

/// Column name -> role. Serialized as a flat JSON object, e.g.
/// `{"load_max": "feature", "rul": "rul", "failure_type": "failure_type"}`.
/// CSV columns the schema does not mention are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub roles: BTreeMap<String, ColumnRole>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn with(mut self, column: &str, role: ColumnRole) -> Self {
        self.roles.insert(column.to_string(), role);
        self
    }

    /// The schema matching the column layout produced by [`write_csv`].
    pub fn for_dataset(d: &Dataset) -> Schema {
        let mut s = Schema::default();
        for name in &d.feature_names {
            s = s.with(name, ColumnRole::Feature);
        }
        s = s
            .with("rul", ColumnRole::Rul)
            .with("failure_type", ColumnRole::FailureType);
        for name in d.strata.keys() {
            s = s.with(name, ColumnRole::Stratum);
        }
        if d.event_time.is_some() && d.event_type.is_some() {
            s = s
                .with("event_time", ColumnRole::EventTime)
                .with("event_type", ColumnRole::EventType);
        }
        s
    }

    fn columns_with(&self, role: ColumnRole) -> Vec<&str> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    fn single(&self, role: ColumnRole, label: &str) -> Result<Option<&str>> {
        let cols = self.columns_with(role);
        match cols.len() {
            0 => Ok(None),
            1 => Ok(Some(cols[0])),
            _ => Err(MtfsError::Schema(format!(
                "schema assigns role {label} to more than one column: {}",
                cols.join(", ")
            ))),
        }
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = File::open(path)?;
    load_csv_from_reader(file, schema)
}

fn header_index(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| MtfsError::Schema(format!("missing column {name:?}")))
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| MtfsError::InvalidRow {
        row,
        message: format!("column {column:?}: cannot parse {cell:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(MtfsError::InvalidRow {
            row,
            message: format!("column {column:?}: non-finite value {cell:?}"),
        });
    }
    Ok(v)
}

/// Parses a CSV with a header row. Row indices in errors count data rows
/// from 0 (the header is not a data row).
pub fn load_csv_from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(MtfsError::EmptyInput("CSV has no header row".into()));
    }

    let rul_col = schema
        .single(ColumnRole::Rul, "rul")?
        .ok_or_else(|| MtfsError::Schema("schema names no rul column".into()))?;
    let ft_col = schema
        .single(ColumnRole::FailureType, "failure_type")?
        .ok_or_else(|| MtfsError::Schema("schema names no failure_type column".into()))?;
    let et_col = schema.single(ColumnRole::EventTime, "event_time")?;
    let ety_col = schema.single(ColumnRole::EventType, "event_type")?;
    if et_col.is_some() != ety_col.is_some() {
        return Err(MtfsError::Schema(
            "event_time and event_type must be given together".into(),
        ));
    }

    // Verify every named column exists before touching rows.
    for col in schema.roles.keys() {
        if schema.roles[col] != ColumnRole::Ignore {
            header_index(&headers, col)?;
        }
    }

    // Features and strata keep the CSV's column order.
    let role_of = |h: &String| schema.roles.get(h).copied();
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| role_of(&headers[i]) == Some(ColumnRole::Feature))
        .collect();
    if feature_idx.is_empty() {
        return Err(MtfsError::Schema("schema names no feature column".into()));
    }
    let strata_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| role_of(&headers[i]) == Some(ColumnRole::Stratum))
        .collect();
    let rul_i = header_index(&headers, rul_col)?;
    let ft_i = header_index(&headers, ft_col)?;
    let et_i = et_col.map(|c| header_index(&headers, c)).transpose()?;
    let ety_i = ety_col.map(|c| header_index(&headers, c)).transpose()?;

    let m = feature_idx.len();
    let mut values = Vec::new();
    let mut rul = Vec::new();
    let mut failure_type = Vec::new();
    let mut strata: Vec<Vec<String>> = vec![Vec::new(); strata_idx.len()];
    let mut event_time = Vec::new();
    let mut event_type = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(MtfsError::InvalidRow {
                row,
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        for &i in &feature_idx {
            values.push(parse_real(&record[i], row, &headers[i])?);
        }
        rul.push(parse_real(&record[rul_i], row, rul_col)?);
        let y = parse_real(&record[ft_i], row, ft_col)?;
        if y != 0.0 && y != 1.0 {
            return Err(MtfsError::InvalidRow {
                row,
                message: format!("failure_type must be 0 or 1, got {:?}", &record[ft_i]),
            });
        }
        failure_type.push(y as u8);
        for (s, &i) in strata.iter_mut().zip(&strata_idx) {
            s.push(record[i].trim().to_string());
        }
        if let (Some(ti), Some(ki)) = (et_i, ety_i) {
            let t = parse_real(&record[ti], row, &headers[ti])?;
            if t <= 0.0 {
                return Err(MtfsError::InvalidRow {
                    row,
                    message: format!("event_time must be positive, got {t}"),
                });
            }
            event_time.push(t);
            event_type.push(
                record[ki]
                    .parse::<EventType>()
                    .map_err(|e| MtfsError::InvalidRow {
                        row,
                        message: e.to_string(),
                    })?,
            );
        }
    }

    let n = rul.len();
    if n == 0 {
        return Err(MtfsError::EmptyInput("CSV contains no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, m), values)
        .map_err(|e| MtfsError::Validation(format!("feature matrix shape: {e}")))?;
    let mut d = Dataset::new(
        features,
        feature_idx.iter().map(|&i| headers[i].clone()).collect(),
        Array1::from(rul),
        failure_type,
    )?;
    d.strata = strata_idx
        .iter()
        .map(|&i| headers[i].clone())
        .zip(strata)
        .collect();
    if et_i.is_some() {
        d.event_time = Some(event_time);
        d.event_type = Some(event_type);
    }
    Ok(d)
}

/// Writes features, `rul`, `failure_type`, strata and (when present)
/// `event_time`/`event_type`. Reals use the shortest round-trip
/// representation, so reading the file back reproduces the values exactly.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let has_events = d.event_time.is_some() && d.event_type.is_some();
    let mut header: Vec<&str> = d.feature_names.iter().map(String::as_str).collect();
    header.extend(["rul", "failure_type"]);
    header.extend(d.strata.keys().map(String::as_str));
    if has_events {
        header.extend(["event_time", "event_type"]);
    }
    w.write_record(&header)?;
    for i in 0..d.n_rows() {
        let mut rec: Vec<String> = d.features.row(i).iter().map(|x| x.to_string()).collect();
        rec.push(d.rul[i].to_string());
        rec.push(d.failure_type[i].to_string());
        rec.extend(d.strata.values().map(|v| v[i].clone()));
        if let (Some(t), Some(k)) = (&d.event_time, &d.event_type) {
            rec.push(t[i].to_string());
            rec.push(k[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
