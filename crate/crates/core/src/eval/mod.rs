//! Confusion-matrix metrics, filter feature-selection scorers and the
//! linear focal-loss classifier used as a feature-selection baseline.

mod linear;
mod metrics;
mod scorers;

pub use linear::{fit_linear, linear_focal_classifier, LinearClassifier};
pub use metrics::{balance, confusion, pd_pf_bal, ConfusionMatrix, EvalReport};
pub use scorers::{
    equal_frequency_bins, gain_ratio, info_gain, relieff, score_features, select_top_k, symmetric_uncertainty,
    FeatureScore, ScoreMethod, DEFAULT_BINS, DEFAULT_NEIGHBORS,
};
