//! Composite-likelihood estimation for clustered data and simultaneous
//! multiple comparisons built on the Godambe sandwich covariance.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod data;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod models;
pub mod mvn;
pub mod numeric;
pub mod simgen;

pub use data::{
    build_contrasts, Cluster, ClusteredDataset, ContrastFamily, ContrastKind, ResponseKind,
    ValidationReport, Violation, ViolationKind,
};
pub use error::{Error, Result};
pub use harness::{
    preset, preset_names, run_experiment, sample_size_scan, ExperimentConfig, SimSummary, TruthKind,
};
pub use inference::{run_tests, Procedure, ProcedureResult, TestOptions, TestReport};
pub use io::{
    read_clustered, read_clustered_csv, read_contrasts, read_contrasts_file, write_clustered,
    write_clustered_csv,
};
pub use models::{fit, FitOptions, FitResult, ModelKind};
pub use mvn::qmc::QmcConfig;
pub use simgen::{generate, ScenarioSpec};
