use std::collections::HashSet;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const ARB_FREE: u8 = 0;
pub const ARB_PRONE: u8 = 1;

/// Tabular metric matrix for one project (or a concatenation of projects).
///
/// Labels are present for source projects and absent for target projects.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    project_id: String,
    metric_names: Vec<String>,
    features: Vec<f64>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(
        project_id: impl Into<String>,
        metric_names: Vec<String>,
        features: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let p = metric_names.len();
        if p == 0 {
            return Err(Error::schema("dataset needs at least one metric"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = metric_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::schema(format!("duplicate metric name '{dup}'")));
        }
        if !features.len().is_multiple_of(p) {
            return Err(Error::shape(format!("{} values do not form rows of {p} metrics", features.len())));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite value at row {}, metric '{}'",
                i / p,
                metric_names[i % p]
            )));
        }
        let n = features.len() / p;
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > ARB_PRONE) {
                return Err(Error::contract(format!("label {bad} is not 0 or 1")));
            }
        }
        Ok(Self { project_id: project_id.into(), metric_names, features, labels })
    }

    pub fn project_id(&self) -> &str {
        &self.project_id
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn n_rows(&self) -> usize {
        self.features.len() / self.metric_names.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metric_names.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_metrics();
        &self.features[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.features[i * self.n_metrics() + j]).collect()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u8]> {
        self.labels()
            .ok_or_else(|| Error::contract(format!("dataset '{}' has no labels", self.project_id)))
    }

    /// `(ARB-free, ARB-prone)` counts.
    pub fn class_counts(&self) -> Option<(usize, usize)> {
        self.labels.as_ref().map(|l| {
            let pos = l.iter().filter(|&&v| v == ARB_PRONE).count();
            (l.len() - pos, pos)
        })
    }

    pub fn without_labels(&self) -> Self {
        Self { labels: None, ..self.clone() }
    }

    pub fn with_project_id(mut self, id: impl Into<String>) -> Self {
        self.project_id = id.into();
        self
    }

    /// Features as an `N x p` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_rows(), self.n_metrics()], self.features.clone()).expect("consistent shape")
    }

    /// Rows in the given order; indices may repeat.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let p = self.n_metrics();
        let mut features = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect());
        Self { project_id: self.project_id.clone(), metric_names: self.metric_names.clone(), features, labels }
    }

    /// Keeps the given metric columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let p = self.n_metrics();
        if let Some(bad) = cols.iter().find(|&&c| c >= p) {
            return Err(Error::shape(format!("column {bad} out of range for {p} metrics")));
        }
        let names = cols.iter().map(|&c| self.metric_names[c].clone()).collect();
        let mut features = Vec::with_capacity(self.n_rows() * cols.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            features.extend(cols.iter().map(|&c| row[c]));
        }
        Self::new(self.project_id.clone(), names, features, self.labels.clone())
    }

    pub(crate) fn check_same_schema(&self, other: &Dataset) -> Result<()> {
        if self.metric_names != other.metric_names {
            return Err(Error::schema(format!(
                "metric schemas of '{}' and '{}' differ",
                self.project_id, other.project_id
            )));
        }
        Ok(())
    }

    /// Writes a header row of metric names, plus `label_column` when the
    /// dataset is labeled and a column name is given.
    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let with_labels = label_column.filter(|_| self.labels.is_some());
        let mut header: Vec<&str> = self.metric_names.iter().map(String::as_str).collect();
        header.extend(with_labels);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format_float(*v)).collect();
            if with_labels.is_some() {
                rec.push(self.labels.as_ref().unwrap()[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
}

/// Reads a comma-separated file with a header row. The label column, when
/// named, must hold 0/1 values and is excluded from the metrics.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(Error::schema(format!("duplicate header '{dup}' in {}", path.display())));
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::schema(format!("label column '{name}' not found in {}", path.display())))?,
        ),
        None => None,
    };
    let metric_names: Vec<String> =
        header.iter().enumerate().filter(|(i, _)| Some(*i) != label_idx).map(|(_, h)| h.clone()).collect();

    let mut features = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: header.get(record.len()).cloned().unwrap_or_default(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == label_idx {
                let label = match cell {
                    "0" => ARB_FREE,
                    "1" => ARB_PRONE,
                    other => {
                        return Err(Error::Parse {
                            row,
                            column: header[c].clone(),
                            message: format!("label '{other}' is not 0 or 1"),
                        })
                    }
                };
                labels.as_mut().unwrap().push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: format!("'{cell}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, column: header[c].clone(), message: format!("'{cell}' is not finite") });
                }
                features.push(v);
            }
        }
    }
    let project_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(project_id, metric_names, features, labels)
}
