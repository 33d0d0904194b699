//! Fixtures shared by the benchmarks.

use clmult_core::harness::preset;
use clmult_core::{generate, ClusteredDataset};
use nalgebra::DMatrix;

/// Equicorrelated `c x c` matrix with off-diagonal `r`.
pub fn equicorrelated(c: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { r })
}

/// Replicate 0 of a built-in preset.
pub fn preset_data(name: &str) -> ClusteredDataset {
    let cfg = preset(name).expect("known preset");
    generate(&cfg.scenario, 0).expect("generated data")
}
