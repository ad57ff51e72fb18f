use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ARB_PRONE};
use crate::error::{Error, Result};

pub const DEFAULT_NORMALIZE_EPS: f64 = 1e-8;

/// Per-feature mean and population standard deviation computed over the
/// pooled source and target rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

impl NormalizationStats {
    pub fn fit(datasets: &[&Dataset], eps: f64) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::config(format!("normalization eps must be positive, got {eps}")));
        }
        let first = datasets.first().ok_or_else(|| Error::contract("no datasets to normalize"))?;
        for d in &datasets[1..] {
            first.check_same_schema(d)?;
        }
        let p = first.n_metrics();
        let n: usize = datasets.iter().map(|d| d.n_rows()).sum();
        if n == 0 {
            return Err(Error::contract("cannot normalize zero rows"));
        }
        let mut mean = vec![0.0; p];
        for d in datasets {
            for i in 0..d.n_rows() {
                for (m, v) in mean.iter_mut().zip(d.row(i)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for d in datasets {
            for i in 0..d.n_rows() {
                for ((s, v), m) in var.iter_mut().zip(d.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { mean, std, eps })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.n_metrics() != self.mean.len() {
            return Err(Error::schema(format!(
                "stats cover {} metrics, dataset '{}' has {}",
                self.mean.len(),
                d.project_id(),
                d.n_metrics()
            )));
        }
        let p = d.n_metrics();
        let features = d
            .features()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % p]) / (self.std[i % p] + self.eps))
            .collect();
        Dataset::new(d.project_id(), d.metric_names().to_vec(), features, d.labels().map(<[u8]>::to_vec))
    }
}

/// Z-scores source and target with statistics pooled over both.
pub fn global_normalize(source: &Dataset, target: &Dataset, eps: f64) -> Result<(Dataset, Dataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(&[source, target], eps)?;
    Ok((stats.apply(source)?, stats.apply(target)?, stats))
}

/// Duplicates randomly chosen minority rows until both classes have the
/// same count, then shuffles.
pub fn random_oversample<R: Rng + ?Sized>(d: &Dataset, rng: &mut R) -> Result<Dataset> {
    let labels = d.require_labels()?;
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] == ARB_PRONE);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract(format!(
            "dataset '{}' has a single class; nothing to balance",
            d.project_id()
        )));
    }
    let (minority, deficit) = if pos.len() < neg.len() { (&pos, neg.len() - pos.len()) } else { (&neg, pos.len() - neg.len()) };
    let mut rows: Vec<usize> = (0..labels.len()).collect();
    rows.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    rows.shuffle(rng);
    Ok(d.select_rows(&rows))
}

/// Row-wise concatenation of labeled projects sharing one schema.
pub fn concat_projects(datasets: &[Dataset]) -> Result<Dataset> {
    let first = datasets.first().ok_or_else(|| Error::contract("no datasets to concatenate"))?;
    if datasets.len() == 1 {
        return Ok(first.clone());
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for d in datasets {
        first.check_same_schema(d)?;
        features.extend_from_slice(d.features());
        labels.extend_from_slice(d.require_labels()?);
    }
    let id = datasets.iter().map(Dataset::project_id).collect::<Vec<_>>().join("+");
    Dataset::new(id, first.metric_names().to_vec(), features, Some(labels))
}
