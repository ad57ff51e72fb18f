use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with the ARB-prone class (label 1) as positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::contract(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (0, 1) => cm.fn_ += 1,
            (1, 0) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            _ => return Err(Error::contract(format!("labels must be 0 or 1, got prediction {p} truth {t}"))),
        }
    }
    Ok(cm)
}

/// `1 - sqrt(pf^2 + (1 - pd)^2) / sqrt(2)`.
pub fn balance(pd: f64, pf: f64) -> f64 {
    1.0 - (pf * pf + (1.0 - pd) * (1.0 - pd)).sqrt() / std::f64::consts::SQRT_2
}

/// Probability of detection, probability of false alarm and balance.
/// Errors when either class is absent from the evaluated labels.
pub fn pd_pf_bal(cm: &ConfusionMatrix) -> Result<(f64, f64, f64)> {
    if cm.tp + cm.fn_ == 0 {
        return Err(Error::UndefinedMetric("PD is undefined: no positive samples".into()));
    }
    if cm.fp + cm.tn == 0 {
        return Err(Error::UndefinedMetric("PF is undefined: no negative samples".into()));
    }
    let pd = cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    let pf = cm.fp as f64 / (cm.fp + cm.tn) as f64;
    Ok((pd, pf, balance(pd, pf)))
}

/// Outcome of evaluating one trained model on one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Source and target groups, e.g. `L=>M`.
    pub experiment: String,
    pub fingerprint: String,
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub pd: f64,
    pub pf: f64,
    pub bal: f64,
}

impl EvalReport {
    pub fn new(experiment: impl Into<String>, fingerprint: impl Into<String>, seed: u64, pred: &[u8], truth: &[u8]) -> Result<Self> {
        let cm = confusion(pred, truth)?;
        let (pd, pf, bal) = pd_pf_bal(&cm)?;
        Ok(Self { experiment: experiment.into(), fingerprint: fingerprint.into(), seed, confusion: cm, pd, pf, bal })
    }

    pub const CSV_HEADER: [&'static str; 10] = ["experiment", "fingerprint", "seed", "tp", "fn", "fp", "tn", "pd", "pf", "bal"];

    pub fn csv_record(&self) -> Vec<String> {
        let c = &self.confusion;
        vec![
            self.experiment.clone(),
            self.fingerprint.clone(),
            self.seed.to_string(),
            c.tp.to_string(),
            c.fn_.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            format!("{:.6}", self.pd),
            format!("{:.6}", self.pf),
            format!("{:.6}", self.bal),
        ]
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} seed={} PD={:.3} PF={:.3} Bal={:.3}", self.experiment, self.seed, self.pd, self.pf, self.bal)
    }
}
