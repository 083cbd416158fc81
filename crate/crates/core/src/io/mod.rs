//! Dataset files, synthetic data, outlier scoring and benchmarks.

pub mod bench;
pub mod dataset;
pub mod outliers;
pub mod synth;

pub use bench::{digest, run_benchmark, BenchConfig, BenchReport, Engine, EngineReport};
pub use dataset::{load_dataset, save_dataset, Format};
pub use outliers::{all_nearest_neighbors, outlier_scores, OutlierRanking};
pub use synth::{gaussian_mixture, planted_outliers, uniform, Mixture, Planted, Preset, SynthKind};
