//! Spearman rank correlation and the pairwise metric correlation report.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use statrs::function::beta::beta_reg;

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Midranks (1-based), averaging the ranks of tied values.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a correlation coefficient from `n` samples using
/// the Student-t approximation with `n - 2` degrees of freedom.
pub fn correlation_p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t2 = rho * rho * df / denom;
    beta_reg(df / 2.0, 0.5, df / (df + t2))
}

fn spearman_from_ranks(rx: &[f64], ry: &[f64]) -> Result<(f64, f64)> {
    let rho = pearson(rx, ry).ok_or_else(|| Error::UndefinedCorrelation("zero rank variance".into()))?;
    Ok((rho, correlation_p_value(rho, rx.len())))
}

/// Spearman's rho with midrank ties and its two-sided p-value.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("spearman inputs have lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 samples, got {}", x.len())));
    }
    spearman_from_ranks(&midranks(x), &midranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCorrelation {
    pub metric_i: String,
    pub metric_j: String,
    /// `None` when a column is constant.
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationReport {
    pub project_id: String,
    pub n_metrics: usize,
    pub total_pairs: usize,
    pub correlated_pairs: usize,
    pub undefined_pairs: usize,
    pub rho_abs_min: f64,
    pub alpha: f64,
    pub pairs: Vec<PairCorrelation>,
}

pub const DEFAULT_RHO_ABS_MIN: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Tests every unordered metric pair; a pair counts as correlated when
/// `|rho| > rho_abs_min` and `p < alpha`.
pub fn correlation_report(d: &Dataset, rho_abs_min: f64, alpha: f64) -> Result<CorrelationReport> {
    if d.n_rows() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 rows, got {}", d.n_rows())));
    }
    let p = d.n_metrics();
    let ranks: Vec<Vec<f64>> = (0..p).map(|j| midranks(&d.column(j))).collect();
    let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            let (rho, p_value) = match spearman_from_ranks(&ranks[i], &ranks[j]) {
                Ok((r, pv)) => (Some(r), Some(pv)),
                Err(_) => (None, None),
            };
            let significant = matches!((rho, p_value), (Some(r), Some(pv)) if r.abs() > rho_abs_min && pv < alpha);
            pairs.push(PairCorrelation {
                metric_i: d.metric_names()[i].clone(),
                metric_j: d.metric_names()[j].clone(),
                rho,
                p_value,
                significant,
            });
        }
    }
    Ok(CorrelationReport {
        project_id: d.project_id().to_owned(),
        n_metrics: p,
        total_pairs: pairs.len(),
        correlated_pairs: pairs.iter().filter(|c| c.significant).count(),
        undefined_pairs: pairs.iter().filter(|c| c.rho.is_none()).count(),
        rho_abs_min,
        alpha,
        pairs,
    })
}

impl CorrelationReport {
    pub fn correlated_fraction(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            self.correlated_pairs as f64 / self.total_pairs as f64
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "p={}, pairs={}, significant={} ({:.2}%), undefined={}",
            self.n_metrics,
            self.total_pairs,
            self.correlated_pairs,
            100.0 * self.correlated_fraction(),
            self.undefined_pairs
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric_i", "metric_j", "rho", "p_value", "significant", "undefined"])?;
        for c in &self.pairs {
            w.write_record([
                c.metric_i.clone(),
                c.metric_j.clone(),
                c.rho.map(|v| v.to_string()).unwrap_or_default(),
                c.p_value.map(|v| v.to_string()).unwrap_or_default(),
                c.significant.to_string(),
                c.rho.is_none().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned-text summary table.
    pub fn write_table(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{:<20} {:>12} {:>12} {:>10}", "Project", "Total pairs", "Correlated", "Percent")?;
        writeln!(
            out,
            "{:<20} {:>12} {:>12} {:>9.2}%",
            self.project_id,
            self.total_pairs,
            self.correlated_pairs,
            100.0 * self.correlated_fraction()
        )?;
        let undefined: Vec<_> = self.pairs.iter().filter(|c| c.rho.is_none()).collect();
        if !undefined.is_empty() {
            writeln!(out, "undefined pairs (constant column):")?;
            for c in undefined {
                writeln!(out, "  {} / {}", c.metric_i, c.metric_j)?;
            }
        }
        Ok(())
    }
}
