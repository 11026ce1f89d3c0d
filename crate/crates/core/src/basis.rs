//! Smoothing prior for segment log-spectra.
//!
//! The log-spectrum of a segment is `g(nu) = alpha0 + h(nu)` where `h` is a
//! scaled Brownian motion in frequency, `cov(h(nu_i), h(nu_j)) = tau2 *
//! min(nu_i, nu_j)`. On the likelihood frequencies `nu_k = k/n`,
//! `k = 1..=m` with `m = n/2`, the covariance is `M / n` where
//! `M_ij = min(i, j)`. `M` is the inverse of the second-difference matrix
//! with a free right boundary, so its eigenpairs are available in closed form:
//!
//! ```text
//! lambda_j = 1 / (4 n sin^2((2j - 1) pi / (2 (2m + 1))))
//! q_j(i)   = 2 / sqrt(2m + 1) * sin((2j - 1) pi i / (2m + 1))
//! ```
//!
//! The design matrix keeps the leading `J = min(30, m)` columns of
//! `Q D^{1/2}`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::spectral::interp_linear;

/// Default number of retained basis functions.
pub const DEFAULT_MAX_BASIS: usize = 30;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    segment_len: usize,
    freqs: Vec<f64>,
    design: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl BasisMatrix {
    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of basis columns `J`.
    pub fn n_basis(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_freqs(&self) -> usize {
        self.design.nrows()
    }
}

/// Brownian-motion covariance `min(nu_i, nu_j)`.
pub fn brownian_cov(freqs: &[f64]) -> Result<DMatrix<f64>> {
    if freqs.iter().any(|f| !(*f > 0.0 && *f <= 0.5)) {
        return invalid("frequencies must lie in (0, 0.5]");
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("frequencies must be strictly increasing");
    }
    let m = freqs.len();
    Ok(DMatrix::from_fn(m, m, |i, j| freqs[i].min(freqs[j])))
}

/// Truncated eigenbasis of the Brownian covariance at the likelihood
/// frequencies of a length-`segment_len` segment.
pub fn build_basis(segment_len: usize, max_basis: usize) -> Result<BasisMatrix> {
    let m = segment_len / 2;
    if m == 0 {
        return invalid(format!(
            "segment of length {segment_len} has no likelihood frequencies"
        ));
    }
    let n = segment_len as f64;
    let j_count = max_basis.min(m);
    let denom = (2 * m + 1) as f64;
    let norm = 2.0 / denom.sqrt();
    let eigenvalues: Vec<f64> = (1..=j_count)
        .map(|j| {
            let s = ((2 * j - 1) as f64 * PI / (2.0 * denom)).sin();
            1.0 / (4.0 * n * s * s)
        })
        .collect();
    let design = DMatrix::from_fn(m, j_count, |i, j| {
        let q = norm * ((2 * j + 1) as f64 * PI * (i + 1) as f64 / denom).sin();
        q * eigenvalues[j].sqrt()
    });
    let freqs = (1..=m).map(|k| k as f64 / n).collect();
    Ok(BasisMatrix {
        segment_len,
        freqs,
        design,
        eigenvalues,
    })
}

/// Memoized [`build_basis`] keyed by segment length. Concurrent readers share
/// entries; insertion takes the write lock.
#[derive(Debug)]
pub struct BasisCache {
    max_basis: usize,
    entries: RwLock<HashMap<usize, Arc<BasisMatrix>>>,
}

impl BasisCache {
    pub fn new(max_basis: usize) -> Self {
        Self {
            max_basis,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn max_basis(&self) -> usize {
        self.max_basis
    }

    pub fn get(&self, segment_len: usize) -> Result<Arc<BasisMatrix>> {
        if let Some(b) = self
            .entries
            .read()
            .expect("basis cache poisoned")
            .get(&segment_len)
        {
            return Ok(Arc::clone(b));
        }
        let built = Arc::new(build_basis(segment_len, self.max_basis)?);
        let mut w = self.entries.write().expect("basis cache poisoned");
        Ok(Arc::clone(w.entry(segment_len).or_insert(built)))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("basis cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for BasisCache {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_BASIS)
    }
}

/// Parameters of one locally stationary segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentParams {
    pub alpha0: f64,
    pub beta: Vec<f64>,
    pub tau2: f64,
}

impl SegmentParams {
    pub fn new(alpha0: f64, beta: Vec<f64>, tau2: f64) -> Result<Self> {
        if !(tau2.is_finite() && tau2 > 0.0) {
            return invalid(format!("tau2 must be positive and finite, got {tau2}"));
        }
        if !alpha0.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return invalid("segment coefficients must be finite");
        }
        Ok(Self { alpha0, beta, tau2 })
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum()
    }
}

/// Hyperparameters: `alpha0 ~ N(0, alpha_var)`, `beta | tau2 ~ N(0, tau2 I)`,
/// `tau2 ~ InvGamma(tau_shape, tau_scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentPrior {
    pub alpha_var: f64,
    pub tau_shape: f64,
    pub tau_scale: f64,
}

impl Default for SegmentPrior {
    fn default() -> Self {
        Self {
            alpha_var: 100.0,
            tau_shape: 1.0,
            tau_scale: 1.0,
        }
    }
}

impl SegmentPrior {
    pub fn log_prior_alpha(&self, alpha0: f64) -> f64 {
        -0.5 * (LN_2PI + self.alpha_var.ln()) - alpha0 * alpha0 / (2.0 * self.alpha_var)
    }

    pub fn log_prior_beta(&self, beta: &[f64], tau2: f64) -> f64 {
        let j = beta.len() as f64;
        let ss: f64 = beta.iter().map(|b| b * b).sum();
        -0.5 * j * (LN_2PI + tau2.ln()) - ss / (2.0 * tau2)
    }

    pub fn log_prior_tau2(&self, tau2: f64) -> f64 {
        let (a, b) = (self.tau_shape, self.tau_scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * tau2.ln() - b / tau2
    }
}

pub fn log_prior_segment(params: &SegmentParams, prior: &SegmentPrior) -> f64 {
    prior.log_prior_alpha(params.alpha0)
        + prior.log_prior_beta(&params.beta, params.tau2)
        + prior.log_prior_tau2(params.tau2)
}

/// `g = alpha0 + X beta` at the basis frequencies.
pub fn eval_log_spectrum(basis: &BasisMatrix, params: &SegmentParams) -> Result<Vec<f64>> {
    if params.beta.len() != basis.n_basis() {
        return invalid(format!(
            "beta has {} entries, basis has {} columns",
            params.beta.len(),
            basis.n_basis()
        ));
    }
    Ok(log_spectrum(basis, params.alpha0, &params.beta))
}

pub(crate) fn log_spectrum(basis: &BasisMatrix, alpha0: f64, beta: &[f64]) -> Vec<f64> {
    let x = &basis.design;
    let mut g = vec![alpha0; x.nrows()];
    for (j, b) in beta.iter().enumerate() {
        if *b == 0.0 {
            continue;
        }
        for (gi, xi) in g.iter_mut().zip(x.column(j).iter()) {
            *gi += xi * b;
        }
    }
    g
}

/// Linear interpolation of `g` (given at the basis frequencies) onto `grid`,
/// constant outside the basis frequency range.
pub fn render_on_grid(basis: &BasisMatrix, g: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&nu| interp_linear(&basis.freqs, g, nu))
        .collect()
}

/// Reconstruct `X X^T`, the truncated covariance.
pub fn truncated_cov(basis: &BasisMatrix) -> DMatrix<f64> {
    &basis.design * basis.design.transpose()
}

/// Residual norm `|Omega q - lambda q|` of column `j` (unscaled eigenvector).
pub fn eigen_residual(basis: &BasisMatrix, omega: &DMatrix<f64>, j: usize) -> f64 {
    let lambda = basis.eigenvalues[j];
    let q: DVector<f64> = basis.design.column(j) / lambda.sqrt();
    (omega * &q - &q * lambda).norm()
}
