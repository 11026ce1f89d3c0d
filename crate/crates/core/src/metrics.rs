//! Distances between a true and an estimated time-varying spectrum.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectral::TvSpectrum;

fn check(a: &TvSpectrum, b: &TvSpectrum) -> Result<()> {
    if !a.same_grid(b) {
        return invalid("spectra are on different grids");
    }
    Ok(())
}

/// Symmetric Kullback-Leibler divergence
/// `sum_{t,k} f log(f/g) + g log(g/f)` over the common grid.
pub fn skl(truth: &TvSpectrum, est: &TvSpectrum) -> Result<f64> {
    check(truth, est)?;
    Ok(truth
        .power()
        .iter()
        .zip(est.power())
        .map(|(&f, &g)| (f - g) * (f / g).ln())
        .sum())
}

/// Sum of squared differences over the common grid.
pub fn mse(truth: &TvSpectrum, est: &TvSpectrum) -> Result<f64> {
    check(truth, est)?;
    Ok(truth
        .power()
        .iter()
        .zip(est.power())
        .map(|(&f, &g)| (f - g) * (f - g))
        .sum())
}

/// One row of an experiment report. Failed estimator runs carry an error
/// message and NaN metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dgp: String,
    pub estimator: String,
    pub replicate: usize,
    pub seed: u64,
    pub skl: f64,
    pub mse: f64,
    pub wall_time_s: f64,
    #[serde(default)]
    pub error: String,
}

impl MetricReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }

    /// Equality ignoring wall time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        self.dgp == other.dgp
            && self.estimator == other.estimator
            && self.replicate == other.replicate
            && self.seed == other.seed
            && self.skl.to_bits() == other.skl.to_bits()
            && self.mse.to_bits() == other.mse.to_bits()
            && self.error == other.error
    }
}
