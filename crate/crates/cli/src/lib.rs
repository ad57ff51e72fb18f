//! Experiment orchestration for cross-project aging-related bug
//! prediction: runs, ablations, sweeps, feature-selection baselines,
//! correlation analysis and synthetic data generation.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{resolve_config, ExperimentConfig, Group, Overrides, Variant};
pub use pipeline::{run, RunManifest};
