//! Experiment runner for the noisyor library: case pipelines, ranking
//! metrics and seeded sweeps, shared by the `noisyor` command-line tool.

pub mod experiments;
pub mod metrics;
pub mod pipeline;
