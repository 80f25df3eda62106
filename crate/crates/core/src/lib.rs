//! Clustering by discriminative similarity: per-point kernel weights and a
//! spectral embedding learned jointly by coordinate descent, with diagnostic
//! evaluators for the underlying classification bounds.

pub mod bounds;
pub mod cdsk_driver;
pub mod data_io;
pub mod disc_similarity;
pub mod embedding;
pub mod error;
pub mod kdc_ise;
pub mod kernel;
pub mod kmeans_metrics;
pub mod simplex_qp;
pub mod spectral_core;

pub use cdsk_driver::{run_baseline_spectral, run_cdsk, tune_lambda, AlphaInit, CdskConfig};
pub use data_io::{load_csv, ClusteringResult, SampleMatrix};
pub use disc_similarity::SimplexWeights;
pub use error::{CdskError, Result};
