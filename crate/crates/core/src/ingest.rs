//! CSV ingestion: real per-device streams from a single file.
//!
//! Expected header: `device_id,feature_0,...,feature_{d-1},label` (UTF-8,
//! `.` decimal point, no thousands separators). Rows are partitioned by
//! device id in file order, split 60/20/20 into train/validation/test, and
//! the training rows are chunked into per-round batches.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::stream::{DeviceId, StreamBatch, StreamSpec, StreamSource};

/// Everything loaded for one device from the file.
#[derive(Debug, Clone)]
pub struct CsvDevice {
    /// Dense index assigned by ascending raw id.
    pub device_id: DeviceId,
    /// The id value as written in the file.
    pub raw_id: u64,
    /// Training stream: chunked rounds behind a [`StreamSource::Csv`].
    pub stream: StreamSpec,
    pub validation: StreamBatch,
    pub test: StreamBatch,
}

struct RawRow {
    line: usize,
    features: Vec<f64>,
    label: f64,
}

/// Load and split a CSV file into per-device streams.
pub fn load_csv(path: &Path, samples_per_round: usize) -> Result<Vec<CsvDevice>> {
    if samples_per_round == 0 {
        return Err(Error::config("samples_per_round must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    let cols = headers.len();
    if cols < 3 {
        return Err(Error::parse(1, format!("need at least 3 columns (device_id, one feature, label), found {cols}")));
    }
    if headers.get(0) != Some("device_id") {
        return Err(Error::parse(1, format!("first column must be 'device_id', found '{}'", headers.get(0).unwrap_or(""))));
    }
    if headers.get(cols - 1) != Some("label") {
        return Err(Error::parse(1, format!("last column must be 'label', found '{}'", headers.get(cols - 1).unwrap_or(""))));
    }
    let dim = cols - 2;
    for j in 0..dim {
        let expected = format!("feature_{j}");
        if headers.get(j + 1) != Some(expected.as_str()) {
            return Err(Error::parse(1, format!(
                "column {} must be '{expected}', found '{}'",
                j + 2,
                headers.get(j + 1).unwrap_or("")
            )));
        }
    }

    // partition rows by raw device id, keeping file order
    let mut partitions: std::collections::BTreeMap<u64, Vec<RawRow>> = std::collections::BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != cols {
            return Err(Error::parse(line, format!("expected {cols} fields, found {}", record.len())));
        }
        let raw_id: u64 = record[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("device_id '{}' is not a non-negative integer", &record[0])))?;
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let cell = &record[j + 1];
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(line, format!("feature_{j} cell '{cell}' is not numeric")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("feature_{j} cell '{cell}' is not finite")));
            }
            features.push(v);
        }
        let label_cell = &record[cols - 1];
        let label: f64 = label_cell
            .parse()
            .map_err(|_| Error::parse(line, format!("label cell '{label_cell}' is not numeric")))?;
        if !label.is_finite() {
            return Err(Error::parse(line, format!("label cell '{label_cell}' is not finite")));
        }
        partitions.entry(raw_id).or_default().push(RawRow { line, features, label });
    }

    if partitions.is_empty() {
        return Err(Error::parse(1, "file contains a header but no data rows".to_string()));
    }

    let mut devices = Vec::with_capacity(partitions.len());
    for (index, (raw_id, rows)) in partitions.into_iter().enumerate() {
        let n = rows.len();
        let n_train = (0.6 * n as f64).floor() as usize;
        let n_val = (0.2 * n as f64).floor() as usize;
        let n_test = n - n_train - n_val;
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::parse(
                rows[0].line,
                format!("device {raw_id}: {n} rows is too few for a non-empty 60/20/20 split"),
            ));
        }
        let train_rows = &rows[..n_train];
        let val_rows = &rows[n_train..n_train + n_val];
        let test_rows = &rows[n_train + n_val..];

        let mut rounds = Vec::new();
        for (round_index, chunk) in train_rows.chunks(samples_per_round).enumerate() {
            rounds.push(batch_from_rows(chunk, dim, round_index));
        }
        let total_rounds = rounds.len();
        devices.push(CsvDevice {
            device_id: index,
            raw_id,
            stream: StreamSpec {
                source: StreamSource::Csv { rounds: Arc::new(rounds) },
                samples_per_round,
                total_rounds,
                seed: 0,
                concept_seed: 0,
                growth_per_round: 0.0,
            },
            validation: batch_from_rows(val_rows, dim, 0),
            test: batch_from_rows(test_rows, dim, 0),
        });
    }
    Ok(devices)
}

fn batch_from_rows(rows: &[RawRow], dim: usize, round_index: usize) -> StreamBatch {
    let mut data = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for r in rows {
        data.extend_from_slice(&r.features);
        labels.push(r.label);
    }
    StreamBatch { features: FeatureMatrix::new(rows.len(), dim, data), labels, round_index }
}
