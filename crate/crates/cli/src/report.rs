use std::path::Path;

use anyhow::Context;
use arft_core::eval::EvalReport;
use serde::{Deserialize, Serialize};

/// Mean and sample standard deviation of per-seed metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub pd_mean: f64,
    pub pf_mean: f64,
    pub bal_mean: f64,
    pub pd_std: f64,
    pub pf_std: f64,
    pub bal_std: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl Aggregate {
    pub fn of(reports: &[EvalReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let col = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        let (pd, pf, bal) = (col(|r| r.pd), col(|r| r.pf), col(|r| r.bal));
        Some(Self {
            runs: reports.len(),
            pd_mean: mean(&pd),
            pf_mean: mean(&pf),
            bal_mean: mean(&bal),
            pd_std: std_dev(&pd),
            pf_std: std_dev(&pf),
            bal_std: std_dev(&bal),
        })
    }
}

/// Per-seed metrics, one CSV row each.
pub fn write_metrics_csv(path: &Path, reports: &[EvalReport]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(EvalReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with a rule under the header. The first column is
/// left-aligned, the rest right-aligned.
pub fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = (0..cols)
            .map(|i| {
                let c = cells.get(i).map(String::as_str).unwrap_or("");
                if i == 0 {
                    format!("{c:<w$}", w = width[0])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_owned()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols.saturating_sub(1))));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn f3(x: f64) -> String {
    format!("{x:.3}")
}

/// Rows are row labels, columns are group labels plus an `Avg.` column
/// holding the row mean.
pub fn pivot_table(corner: &str, row_labels: &[String], groups: &[String], cell: impl Fn(usize, usize) -> f64) -> String {
    let mut header = vec![corner.to_owned()];
    header.extend(groups.iter().cloned());
    header.push("Avg.".into());
    let rows: Vec<Vec<String>> = row_labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let values: Vec<f64> = (0..groups.len()).map(|g| cell(i, g)).collect();
            let mut r = vec![label.clone()];
            r.extend(values.iter().map(|&v| f3(v)));
            r.push(f3(mean(&values)));
            r
        })
        .collect();
    format_table(&header, &rows)
}
