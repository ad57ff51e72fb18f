//! Dataset ingestion, global normalization, oversampling, correlation
//! analysis and synthetic project generation.

mod correlation;
mod dataset;
mod preprocess;
mod synth;

pub use correlation::{
    correlation_p_value, correlation_report, midranks, spearman_rho, CorrelationReport, PairCorrelation,
    DEFAULT_ALPHA, DEFAULT_RHO_ABS_MIN,
};
pub use dataset::{format_float, load_csv, Dataset, ARB_FREE, ARB_PRONE};
pub use preprocess::{concat_projects, global_normalize, random_oversample, NormalizationStats, DEFAULT_NORMALIZE_EPS};
pub use synth::{synth_generate, SynthConfig};
