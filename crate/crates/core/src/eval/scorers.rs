//! Filter feature-selection scorers.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    InfoGain,
    GainRatio,
    Relieff,
    SymmetricUncertainty,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] =
        [ScoreMethod::InfoGain, ScoreMethod::GainRatio, ScoreMethod::Relieff, ScoreMethod::SymmetricUncertainty];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::InfoGain => "info_gain",
            ScoreMethod::GainRatio => "gain_ratio",
            ScoreMethod::Relieff => "relieff",
            ScoreMethod::SymmetricUncertainty => "symmetric_uncertainty",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub method: ScoreMethod,
    pub scores: Vec<f64>,
    /// Filled by [`FeatureScore::select`].
    pub selected: Vec<usize>,
}

impl FeatureScore {
    fn new(method: ScoreMethod, scores: Vec<f64>) -> Self {
        Self { method, scores, selected: Vec::new() }
    }

    pub fn select(mut self, k: usize) -> Result<Self> {
        self.selected = select_top_k(&self, k)?;
        Ok(self)
    }
}

/// Indices of the `k` highest scores in rank order, lower index first on
/// ties.
pub fn select_top_k(score: &FeatureScore, k: usize) -> Result<Vec<usize>> {
    let p = score.scores.len();
    if k == 0 || k > p {
        return Err(Error::config(format!("k must lie in 1..={p}, got {k}")));
    }
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| score.scores[b].total_cmp(&score.scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Equal-frequency bin of each value: rank `r` of `n` goes to bin
/// `r * bins / n`, and equal values share the bin of their first
/// occurrence in sorted order.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        out[i] = if r > 0 && values[order[r - 1]] == values[i] { out[order[r - 1]] } else { r * bins / n };
    }
    out
}

fn entropy_of_counts<'a>(counts: impl Iterator<Item = &'a usize>, n: usize) -> f64 {
    counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// `(H(Y), H(X), H(Y | X))` for one binned feature, in nats.
fn entropies(binned: &[usize], labels: &[u8]) -> (f64, f64, f64) {
    let n = labels.len();
    let mut y = [0usize; 2];
    let mut x: HashMap<usize, [usize; 2]> = HashMap::new();
    for (&b, &l) in binned.iter().zip(labels) {
        y[usize::from(l)] += 1;
        x.entry(b).or_default()[usize::from(l)] += 1;
    }
    let h_y = entropy_of_counts(y.iter(), n);
    let sizes: Vec<usize> = x.values().map(|c| c[0] + c[1]).collect();
    let h_x = entropy_of_counts(sizes.iter(), n);
    let h_y_given_x = x
        .values()
        .map(|c| {
            let m = c[0] + c[1];
            m as f64 / n as f64 * entropy_of_counts(c.iter(), m)
        })
        .sum();
    (h_y, h_x, h_y_given_x)
}

fn entropy_scores(data: &Dataset, bins: usize, method: ScoreMethod, f: impl Fn(f64, f64, f64) -> f64) -> Result<FeatureScore> {
    let labels = data.require_labels()?;
    if bins < 2 {
        return Err(Error::config(format!("need at least 2 bins, got {bins}")));
    }
    if data.n_rows() < bins {
        return Err(Error::contract(format!("{} rows is fewer than {bins} bins", data.n_rows())));
    }
    let scores = (0..data.n_metrics())
        .map(|j| {
            let (h_y, h_x, h_y_x) = entropies(&equal_frequency_bins(&data.column(j), bins), labels);
            // a single occupied bin carries no information
            if h_x == 0.0 {
                0.0
            } else {
                f(h_y, h_x, (h_y - h_y_x).max(0.0))
            }
        })
        .collect();
    Ok(FeatureScore::new(method, scores))
}

/// `H(Y) - H(Y | X)` over equal-frequency bins, natural log.
pub fn info_gain(data: &Dataset, bins: usize) -> Result<FeatureScore> {
    entropy_scores(data, bins, ScoreMethod::InfoGain, |_, _, ig| ig)
}

/// Information gain divided by the entropy of the binned feature.
pub fn gain_ratio(data: &Dataset, bins: usize) -> Result<FeatureScore> {
    entropy_scores(data, bins, ScoreMethod::GainRatio, |_, h_x, ig| ig / h_x)
}

/// `2 IG / (H(X) + H(Y))`.
pub fn symmetric_uncertainty(data: &Dataset, bins: usize) -> Result<FeatureScore> {
    entropy_scores(data, bins, ScoreMethod::SymmetricUncertainty, |h_y, h_x, ig| {
        let denom = h_x + h_y;
        if denom > 0.0 {
            (2.0 * ig / denom).min(1.0)
        } else {
            0.0
        }
    })
}

/// ReliefF weights for a binary label.
///
/// Per-feature differences are scaled by the feature's range and summed
/// (Manhattan) to find neighbours; distance ties go to the lower row
/// index. With `sample_count = None` every row is a probe, otherwise that
/// many distinct probes are drawn from `rng`.
pub fn relieff<R: Rng + ?Sized>(data: &Dataset, k_neighbors: usize, sample_count: Option<usize>, rng: &mut R) -> Result<FeatureScore> {
    let labels = data.require_labels()?;
    let (n, p) = (data.n_rows(), data.n_metrics());
    let (neg, pos) = data.class_counts().unwrap_or((0, 0));
    let smallest = neg.min(pos);
    if smallest < 2 {
        return Err(Error::contract(format!("each class needs at least 2 rows, got {neg} / {pos}")));
    }
    let mut k = k_neighbors.max(1);
    if smallest <= k {
        k = smallest - 1;
        log::warn!("class with {smallest} rows: reducing ReliefF neighbours from {k_neighbors} to {k}");
    }
    let x = data.features();
    let range: Vec<f64> = (0..p)
        .map(|j| {
            let col = data.column(j);
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect();
    let diff = |a: usize, b: usize, j: usize| {
        if range[j] > 0.0 {
            (x[a * p + j] - x[b * p + j]).abs() / range[j]
        } else {
            0.0
        }
    };
    let probes: Vec<usize> = match sample_count {
        None => (0..n).collect(),
        Some(m) if m >= 1 && m <= n => {
            let mut s = sample(rng, n, m).into_vec();
            s.sort_unstable();
            s
        }
        Some(m) => return Err(Error::config(format!("sample_count must lie in 1..={n}, got {m}"))),
    };
    let m = probes.len() as f64;
    let mut w = vec![0.0; p];
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &i in &probes {
        dist.clear();
        dist.extend((0..n).filter(|&r| r != i).map(|r| ((0..p).map(|j| diff(i, r, j)).sum::<f64>(), r)));
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = |same: bool| dist.iter().filter(move |&&(_, r)| (labels[r] == labels[i]) == same).take(k);
        // with two classes the prior weight P(C) / (1 - P(class(i))) is 1
        for &(_, r) in nearest(true) {
            for (j, wj) in w.iter_mut().enumerate() {
                *wj -= diff(i, r, j) / (m * k as f64);
            }
        }
        for &(_, r) in nearest(false) {
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += diff(i, r, j) / (m * k as f64);
            }
        }
    }
    Ok(FeatureScore::new(ScoreMethod::Relieff, w))
}

/// Dispatches on `method` with default bins and neighbours.
pub fn score_features<R: Rng + ?Sized>(method: ScoreMethod, data: &Dataset, rng: &mut R) -> Result<FeatureScore> {
    match method {
        ScoreMethod::InfoGain => info_gain(data, DEFAULT_BINS),
        ScoreMethod::GainRatio => gain_ratio(data, DEFAULT_BINS),
        ScoreMethod::SymmetricUncertainty => symmetric_uncertainty(data, DEFAULT_BINS),
        ScoreMethod::Relieff => relieff(data, DEFAULT_NEIGHBORS, None, rng),
    }
}
