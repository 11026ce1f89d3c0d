//! Frequency-domain primitives: DFT, periodogram, Whittle log-likelihood and
//! analytic reference spectra.
//!
//! Conventions: the DFT of `y_1..y_n` at `nu_k = k/n` is
//! `x_k = n^{-1/2} sum_{t=1}^{n} y_t exp(-2 pi i nu_k t)`. Time is indexed
//! from 1, so coefficients carry a phase of `exp(-2 pi i k / n)` relative to
//! a zero-based FFT. The periodogram is `I_k = |x_k|^2`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Ordered real-valued observations.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    origin_label: Option<String>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("time series must contain at least one value");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("time series value at index {i} is not finite"));
        }
        Ok(Self {
            values,
            origin_label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.origin_label = Some(label.into());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> Option<&str> {
        self.origin_label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierCoeffs {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FourierCoeffs {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn modulus_sq(&self, k: usize) -> f64 {
        self.re[k] * self.re[k] + self.im[k] * self.im[k]
    }
}

/// Half-spectrum periodogram `I(nu_k)` for `k = 0..=n/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodogram {
    n: usize,
    pub freqs: Vec<f64>,
    pub ordinates: Vec<f64>,
}

impl Periodogram {
    /// Build from ordinates at `k = 0..=n/2` of a length-`n` series.
    pub fn from_ordinates(n: usize, ordinates: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return invalid("periodogram requires n >= 2");
        }
        if ordinates.len() != n / 2 + 1 {
            return invalid(format!(
                "expected {} ordinates for n = {n}, got {}",
                n / 2 + 1,
                ordinates.len()
            ));
        }
        if ordinates.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("periodogram ordinates must be finite and nonnegative");
        }
        let freqs = (0..=n / 2).map(|k| k as f64 / n as f64).collect();
        Ok(Self {
            n,
            freqs,
            ordinates,
        })
    }

    /// Length of the series the periodogram was computed from.
    pub fn series_len(&self) -> usize {
        self.n
    }

    /// Frequencies, ordinates and weights entering the Whittle likelihood:
    /// `k = 1..=n/2`, weight 1/2 on the Nyquist ordinate when `n` is even.
    pub fn likelihood_terms(&self) -> WhittleTerms {
        let m = self.n / 2;
        let weights = (1..=m)
            .map(|k| if 2 * k == self.n { 0.5 } else { 1.0 })
            .collect();
        WhittleTerms {
            n: self.n,
            freqs: self.freqs[1..].to_vec(),
            ordinates: self.ordinates[1..].to_vec(),
            weights,
        }
    }
}

/// Periodogram ordinates restricted to the likelihood frequency set.
#[derive(Clone, Debug, PartialEq)]
pub struct WhittleTerms {
    pub n: usize,
    pub freqs: Vec<f64>,
    pub ordinates: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WhittleTerms {
    /// Demean `segment`, then take its periodogram on `k = 1..=n/2`.
    pub fn from_segment(segment: &[f64]) -> Result<Self> {
        if segment.len() < 2 {
            return invalid("segment must have length >= 2");
        }
        let mean = segment.iter().sum::<f64>() / segment.len() as f64;
        let centered: Vec<f64> = segment.iter().map(|v| v - mean).collect();
        Ok(periodogram_values(&centered)?.likelihood_terms())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// `sum_k c_k (-g_k - I_k exp(-g_k))`.
    pub fn loglik(&self, logspec: &[f64]) -> Result<f64> {
        if logspec.len() != self.len() {
            return invalid(format!(
                "log-spectrum has {} entries, likelihood set has {}",
                logspec.len(),
                self.len()
            ));
        }
        Ok(self.loglik_unchecked(logspec))
    }

    pub(crate) fn loglik_unchecked(&self, logspec: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.ordinates)
            .zip(logspec)
            .map(|((c, i), g)| c * (-g - i * (-g).exp()))
            .sum()
    }

    /// Weighted mean ordinate; the maximizer of the likelihood over constant
    /// log-spectra is its logarithm.
    pub fn weighted_mean(&self) -> f64 {
        let w: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .zip(&self.ordinates)
            .map(|(c, i)| c * i)
            .sum::<f64>()
            / w
    }
}

/// Positive spectral density sampled on increasing frequencies in `[0, 1/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumCurve {
    freqs: Vec<f64>,
    power: Vec<f64>,
}

impl SpectrumCurve {
    pub fn new(freqs: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.len() != power.len() {
            return invalid("spectrum curve needs equal, nonzero numbers of frequencies and powers");
        }
        if freqs.iter().any(|f| !(0.0..=0.5).contains(f)) {
            return invalid("spectrum frequencies must lie in [0, 0.5]");
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("spectrum frequencies must be strictly increasing");
        }
        if power.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return invalid("spectrum power must be positive and finite");
        }
        Ok(Self { freqs, power })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    /// Linear interpolation in frequency, constant beyond the end points.
    pub fn interpolate(&self, nu: f64) -> f64 {
        interp_linear(&self.freqs, &self.power, nu)
    }
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`; flat extrapolation.
pub(crate) fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + w * (ys[hi] - ys[lo])
}

/// Time x frequency grid of spectral power, stored row-major by time.
#[derive(Clone, Debug, PartialEq)]
pub struct TvSpectrum {
    time_grid: Vec<usize>,
    freq_grid: Vec<f64>,
    power: Vec<f64>,
}

impl TvSpectrum {
    pub fn new(time_grid: Vec<usize>, freq_grid: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        if time_grid.is_empty() || freq_grid.is_empty() {
            return invalid("time-varying spectrum needs nonempty grids");
        }
        if power.len() != time_grid.len() * freq_grid.len() {
            return invalid(format!(
                "power has {} entries, grid is {} x {}",
                power.len(),
                time_grid.len(),
                freq_grid.len()
            ));
        }
        if power.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return invalid("time-varying spectrum entries must be positive and finite");
        }
        Ok(Self {
            time_grid,
            freq_grid,
            power,
        })
    }

    /// Constant spectrum over times `1..=t_len`.
    pub fn flat(t_len: usize, freq_grid: Vec<f64>, level: f64) -> Result<Self> {
        let power = vec![level; t_len * freq_grid.len()];
        Self::new((1..=t_len).collect(), freq_grid, power)
    }

    /// Spectrum that is constant within each time segment and follows
    /// `curve_of(segment)` in frequency. `lengths` partition `1..=T`.
    pub fn piecewise<F>(lengths: &[usize], freq_grid: Vec<f64>, mut curve_of: F) -> Result<Self>
    where
        F: FnMut(usize, f64) -> f64,
    {
        let t_len: usize = lengths.iter().sum();
        let nf = freq_grid.len();
        let mut power = Vec::with_capacity(t_len * nf);
        for (s, &len) in lengths.iter().enumerate() {
            let row: Vec<f64> = freq_grid.iter().map(|&nu| curve_of(s, nu)).collect();
            for _ in 0..len {
                power.extend_from_slice(&row);
            }
        }
        Self::new((1..=t_len).collect(), freq_grid, power)
    }

    pub fn time_grid(&self) -> &[usize] {
        &self.time_grid
    }

    pub fn freq_grid(&self) -> &[f64] {
        &self.freq_grid
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.freq_grid.len()
    }

    pub fn get(&self, t_idx: usize, f_idx: usize) -> f64 {
        self.power[t_idx * self.freq_grid.len() + f_idx]
    }

    pub fn row(&self, t_idx: usize) -> &[f64] {
        let nf = self.freq_grid.len();
        &self.power[t_idx * nf..(t_idx + 1) * nf]
    }

    pub fn same_grid(&self, other: &TvSpectrum) -> bool {
        self.time_grid == other.time_grid && self.freq_grid == other.freq_grid
    }

    /// Mean power over time at each frequency.
    pub fn time_average(&self) -> Vec<f64> {
        let nf = self.n_freqs();
        let mut acc = vec![0.0; nf];
        for t in 0..self.n_times() {
            for (a, p) in acc.iter_mut().zip(self.row(t)) {
                *a += p;
            }
        }
        let nt = self.n_times() as f64;
        acc.iter_mut().for_each(|a| *a /= nt);
        acc
    }
}

/// `n_freqs` equally spaced frequencies on `[0, 1/2]`.
pub fn default_freq_grid(n_freqs: usize) -> Vec<f64> {
    match n_freqs {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n_freqs)
            .map(|j| 0.5 * j as f64 / (n_freqs - 1) as f64)
            .collect(),
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// DFT with `1/sqrt(n)` normalization and time indexed `t = 1..=n`.
pub fn dft(y: &TimeSeries) -> Result<FourierCoeffs> {
    dft_values(y.values())
}

pub fn dft_values(y: &[f64]) -> Result<FourierCoeffs> {
    let n = y.len();
    if n < 2 {
        return invalid("DFT requires a series of length >= 2");
    }
    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for (k, c) in buf.iter().enumerate() {
        // shift from t = 0..n-1 to t = 1..n
        let phase = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64);
        let z = c * phase * scale;
        re.push(z.re);
        im.push(z.im);
    }
    // Exact zeros where the real-input symmetry forces them.
    im[0] = 0.0;
    if n.is_multiple_of(2) {
        im[n / 2] = 0.0;
    }
    Ok(FourierCoeffs { re, im })
}

/// Inverse of [`dft_values`]: returns the real and imaginary parts of
/// `y_t = n^{-1/2} sum_k x_k exp(2 pi i nu_k t)`, `t = 1..=n`.
pub fn inverse_dft(coeffs: &FourierCoeffs) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = coeffs.len();
    if n < 2 || coeffs.im.len() != n {
        return invalid("inverse DFT requires matching real/imaginary parts of length >= 2");
    }
    // Fold the t = 1 offset into the coefficients so that output index m of
    // the zero-based inverse FFT is y_{m+1}.
    let mut buf: Vec<Complex64> = (0..n)
        .map(|k| {
            let phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
            Complex64::new(coeffs.re[k], coeffs.im[k]) * phase
        })
        .collect();
    inverse_plan(n).process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    let re = buf.iter().map(|c| c.re * scale).collect();
    let im = buf.iter().map(|c| c.im * scale).collect();
    Ok((re, im))
}

pub fn periodogram(y: &TimeSeries) -> Result<Periodogram> {
    periodogram_values(y.values())
}

pub fn periodogram_values(y: &[f64]) -> Result<Periodogram> {
    let n = y.len();
    if n < 2 {
        return invalid("periodogram requires a series of length >= 2");
    }
    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    let inv_n = 1.0 / n as f64;
    let ordinates = buf[..=n / 2].iter().map(|c| c.norm_sqr() * inv_n).collect();
    Periodogram::from_ordinates(n, ordinates)
}

/// Whittle log-likelihood of `pg` under log-spectrum `logspec`, evaluated on
/// `k = 1..=n/2` (`logspec[j]` belongs to `k = j + 1`). The `-log(pi)`
/// constants are omitted.
pub fn whittle_loglik(pg: &Periodogram, logspec: &[f64]) -> Result<f64> {
    if logspec.iter().any(|g| !g.is_finite()) {
        return invalid("log-spectrum entries must be finite");
    }
    pg.likelihood_terms().loglik(logspec)
}

/// Flat spectrum at the unconditional variance of a GARCH process.
pub fn garch_flat_spectrum(sigma2_uc: f64, freq_grid: &[f64]) -> Result<SpectrumCurve> {
    if !(sigma2_uc.is_finite() && sigma2_uc > 0.0) {
        return invalid(format!("unconditional variance must be positive, got {sigma2_uc}"));
    }
    SpectrumCurve::new(freq_grid.to_vec(), vec![sigma2_uc; freq_grid.len()])
}

pub fn ar2_is_stationary(phi1: f64, phi2: f64) -> bool {
    phi1 + phi2 < 1.0 && phi2 - phi1 < 1.0 && phi2.abs() < 1.0
}

/// Spectral density of an AR(2) process at a single frequency.
pub fn ar2_density(phi1: f64, phi2: f64, sigma2: f64, nu: f64) -> f64 {
    let w = 2.0 * PI * nu;
    let re = 1.0 - phi1 * w.cos() - phi2 * (2.0 * w).cos();
    let im = phi1 * w.sin() + phi2 * (2.0 * w).sin();
    sigma2 / (re * re + im * im)
}

/// `f(nu) = sigma2 / |1 - phi1 e^{-2 pi i nu} - phi2 e^{-4 pi i nu}|^2`.
pub fn ar2_spectrum(phi1: f64, phi2: f64, sigma2: f64, freq_grid: &[f64]) -> Result<SpectrumCurve> {
    if !ar2_is_stationary(phi1, phi2) {
        return Err(Error::InvalidInput(format!(
            "AR(2) coefficients ({phi1}, {phi2}) are outside the stationarity triangle"
        )));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return invalid("innovation variance must be positive");
    }
    let power = freq_grid
        .iter()
        .map(|&nu| ar2_density(phi1, phi2, sigma2, nu))
        .collect();
    SpectrumCurve::new(freq_grid.to_vec(), power)
}
