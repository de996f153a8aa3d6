use std::path::Path;

use crate::error::{Error, Result};

/// Binary-classification data: `features` is row-major `n×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let p = features[0].len();
        if features.iter().any(|r| r.len() != p) {
            return Err(Error::Dataset("ragged feature rows".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Dataset(format!("label {bad} is not binary")));
        }
        Ok(Self { features, labels })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn columns(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Rescales every column to zero mean and unit (population) variance.
    /// Constant columns are left unchanged.
    pub fn standardize(&mut self) {
        let n = self.rows() as f64;
        for c in 0..self.columns() {
            let mean = self.features.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = self.features.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            if var <= 1e-24 {
                log::warn!("column {c} is constant; left unstandardized");
                continue;
            }
            let sd = var.sqrt();
            for r in &mut self.features {
                r[c] = (r[c] - mean) / sd;
            }
        }
    }

    /// Appends a column of ones.
    pub fn with_intercept(mut self) -> Self {
        for r in &mut self.features {
            r.push(1.0);
        }
        self
    }
}

/// Reads a headered numeric CSV, splits off `label_col`, standardizes the
/// features and appends an intercept column.
pub fn load_csv_dataset(path: impl AsRef<Path>, label_col: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_col)
        .ok_or_else(|| Error::Dataset(format!("no column named '{label_col}'")))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len().saturating_sub(1));
        for (i, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Dataset(format!("row {}: cannot parse '{field}'", line + 1))
            })?;
            if i == label_idx {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    let mut data = Dataset::new(features, labels)?;
    data.standardize();
    Ok(data.with_intercept())
}
