//! Simulation of GARCH, deterministic-regime GARCH and spectrally
//! synthesized series, each with its ground-truth time-varying spectrum.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{posterior_mean_spectrum, PosteriorDraws};
use crate::spectral::{inverse_dft, FourierCoeffs, SpectrumCurve, TimeSeries, TvSpectrum};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub mu: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta1: f64,
}

impl GarchParams {
    pub fn new(mu: f64, alpha0: f64, alpha1: f64, beta1: f64) -> Result<Self> {
        let p = Self {
            mu,
            alpha0,
            alpha1,
            beta1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return invalid("GARCH mean must be finite");
        }
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return invalid(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.alpha1 >= 0.0 && self.beta1 >= 0.0) {
            return invalid("alpha1 and beta1 must be nonnegative");
        }
        if self.alpha1 + self.beta1 >= 1.0 {
            return invalid(format!(
                "alpha1 + beta1 = {} is not below 1",
                self.alpha1 + self.beta1
            ));
        }
        Ok(())
    }

    /// Unconditional variance `alpha0 / (1 - alpha1 - beta1)`.
    pub fn sigma2_uc(&self) -> f64 {
        self.alpha0 / (1.0 - self.alpha1 - self.beta1)
    }

    /// The single-regime simulation setting: `(0, 1, 0.1, 0.1)`.
    pub fn reference() -> Self {
        Self {
            mu: 0.0,
            alpha0: 1.0,
            alpha1: 0.1,
            beta1: 0.1,
        }
    }

    /// The high-volatility regime of the switching setting: `(0, 1, 0.3, 0.2)`.
    pub fn reference_high() -> Self {
        Self {
            mu: 0.0,
            alpha0: 1.0,
            alpha1: 0.3,
            beta1: 0.2,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// GARCH(1,1) with Gaussian innovations, started at the unconditional
/// variance.
pub fn simulate_garch<R: Rng + ?Sized>(params: &GarchParams, t_len: usize, rng: &mut R) -> Result<TimeSeries> {
    params.validate()?;
    if t_len == 0 {
        return invalid("series length must be positive");
    }
    let mut y = Vec::with_capacity(t_len);
    let mut sigma2 = params.sigma2_uc();
    for t in 0..t_len {
        if t > 0 {
            let eta = y[t - 1] - params.mu;
            sigma2 = params.alpha0 + params.alpha1 * eta * eta + params.beta1 * sigma2;
        }
        y.push(params.mu + sigma2.sqrt() * normal(rng));
    }
    TimeSeries::new(y)
}

/// Deterministic sequence of GARCH regimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regimes: Vec<GarchParams>,
    /// End of each segment (1-based, inclusive); the last equals `T`.
    pub cutpoints: Vec<usize>,
    /// Regime of each segment, 1-based.
    pub labels: Vec<usize>,
    /// Restart the variance recursion at each regime's unconditional
    /// variance when a segment begins.
    pub reset_at_boundaries: bool,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return invalid("need at least one regime");
        }
        for p in &self.regimes {
            p.validate()?;
        }
        if self.cutpoints.is_empty() || self.cutpoints.len() != self.labels.len() {
            return invalid("need one label per segment");
        }
        if self.cutpoints[0] == 0 || self.cutpoints.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("segment ends must be positive and strictly increasing");
        }
        if self.labels.iter().any(|&l| l == 0 || l > self.regimes.len()) {
            return invalid("regime labels must lie in 1..=N_R");
        }
        if self.cutpoints.len() < self.regimes.len() {
            return invalid("fewer segments than regimes");
        }
        Ok(())
    }

    pub fn t_len(&self) -> usize {
        *self.cutpoints.last().unwrap_or(&0)
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.cutpoints
            .iter()
            .map(|&c| {
                let l = c - prev;
                prev = c;
                l
            })
            .collect()
    }

    /// Regimes (1, 2, 1) with ends at 20%, 60% and 100% of `t_len`; at
    /// `t_len = 5000` these are 1000, 3000 and 5000.
    pub fn reference(t_len: usize) -> Result<Self> {
        let cut = |frac: f64| (frac * t_len as f64).round() as usize;
        let spec = Self {
            regimes: vec![GarchParams::reference(), GarchParams::reference_high()],
            cutpoints: vec![cut(0.2), cut(0.6), t_len],
            labels: vec![1, 2, 1],
            reset_at_boundaries: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ground truth: flat within each segment at its regime's unconditional
    /// variance.
    pub fn truth(&self, freq_grid: &[f64]) -> Result<TvSpectrum> {
        self.validate()?;
        let levels: Vec<f64> = self
            .labels
            .iter()
            .map(|&l| self.regimes[l - 1].sigma2_uc())
            .collect();
        TvSpectrum::piecewise(&self.segment_lengths(), freq_grid.to_vec(), |s, _| levels[s])
    }
}

pub fn simulate_regime<R: Rng + ?Sized>(
    spec: &RegimeSpec,
    freq_grid: &[f64],
    rng: &mut R,
) -> Result<(TimeSeries, TvSpectrum)> {
    spec.validate()?;
    let truth = spec.truth(freq_grid)?;
    let t_len = spec.t_len();
    let mut y = Vec::with_capacity(t_len);
    let mut sigma2 = 0.0;
    let mut start = 0;
    let mut prev_mu = 0.0;
    for (&end, &label) in spec.cutpoints.iter().zip(&spec.labels) {
        let p = &spec.regimes[label - 1];
        for t in start..end {
            if t == 0 || (t == start && spec.reset_at_boundaries) {
                sigma2 = p.sigma2_uc();
            } else {
                let eta = y[t - 1] - prev_mu;
                sigma2 = p.alpha0 + p.alpha1 * eta * eta + p.beta1 * sigma2;
            }
            y.push(p.mu + sigma2.sqrt() * normal(rng));
            prev_mu = p.mu;
        }
        start = end;
    }
    Ok((TimeSeries::new(y)?, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthOptions {
    /// Force the zero-frequency coefficient to 0 so the output has mean
    /// exactly zero. When false it is drawn from `N(0, f(0))`.
    pub zero_dc: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { zero_dc: true }
    }
}

/// Draw Fourier coefficients with `E|x_k|^2 = f(k/n)` and conjugate
/// symmetry, then invert.
pub fn synthesize_from_fn<F, R>(f: F, n: usize, opts: SynthOptions, rng: &mut R) -> Result<TimeSeries>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    if n < 4 {
        return invalid("synthesis needs n >= 4");
    }
    let power = |k: usize| -> Result<f64> {
        let v = f(k as f64 / n as f64);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidInput(format!(
                "spectrum must be positive, got {v} at frequency {}",
                k as f64 / n as f64
            )));
        }
        Ok(v)
    };
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let f0 = power(0)?;
    if !opts.zero_dc {
        re[0] = f0.sqrt() * normal(rng);
    }
    let half = n.div_ceil(2);
    for k in 1..half {
        let sd = (power(k)? / 2.0).sqrt();
        re[k] = sd * normal(rng);
        im[k] = sd * normal(rng);
        re[n - k] = re[k];
        im[n - k] = -im[k];
    }
    if n.is_multiple_of(2) {
        re[n / 2] = power(n / 2)?.sqrt() * normal(rng);
    }
    let (y, resid) = inverse_dft(&FourierCoeffs { re, im })?;
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let worst = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if worst > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "synthesized series has imaginary residual {worst}"
        )));
    }
    TimeSeries::new(y)
}

/// [`synthesize_from_fn`] with `f` interpolated from `curve`.
pub fn synthesize_from_spectrum<R: Rng + ?Sized>(
    curve: &SpectrumCurve,
    n: usize,
    opts: SynthOptions,
    rng: &mut R,
) -> Result<TimeSeries> {
    synthesize_from_fn(|nu| curve.interpolate(nu), n, opts, rng)
}

/// Segment lengths with one spectrum per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseSpectrum {
    pub segment_lengths: Vec<usize>,
    pub curves: Vec<SpectrumCurve>,
}

#[derive(Serialize, Deserialize)]
struct PiecewiseRow {
    segment: usize,
    length: usize,
    nu: f64,
    power: f64,
}

impl PiecewiseSpectrum {
    pub fn new(segment_lengths: Vec<usize>, curves: Vec<SpectrumCurve>) -> Result<Self> {
        if segment_lengths.is_empty() || segment_lengths.len() != curves.len() {
            return invalid("need one curve per segment");
        }
        if segment_lengths.iter().any(|&l| l < 2) {
            return invalid("segment lengths must be >= 2");
        }
        Ok(Self {
            segment_lengths,
            curves,
        })
    }

    pub fn t_len(&self) -> usize {
        self.segment_lengths.iter().sum()
    }

    pub fn truth(&self, freq_grid: &[f64]) -> Result<TvSpectrum> {
        TvSpectrum::piecewise(&self.segment_lengths, freq_grid.to_vec(), |s, nu| {
            self.curves[s].interpolate(nu)
        })
    }

    /// Three AR(2)-shaped segments covering 30%, 40% and 30% of `t_len`:
    /// a low-frequency peak, a high-frequency peak, then a mid-frequency
    /// peak at a different level. Curves are tabulated on 513 points.
    pub fn reference(t_len: usize) -> Result<Self> {
        let a = (0.3 * t_len as f64).round() as usize;
        let b = (0.4 * t_len as f64).round() as usize;
        if t_len < a + b + 2 {
            return invalid("series too short for the three-segment fixture");
        }
        let grid = crate::spectral::default_freq_grid(513);
        let shapes = [(0.9, -0.2, 1.0), (-0.6, -0.3, 1.5), (0.0, -0.7, 0.5)];
        let curves = shapes
            .iter()
            .map(|&(p1, p2, s2)| crate::spectral::ar2_spectrum(p1, p2, s2, &grid))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vec![a, b, t_len - a - b], curves)
    }

    /// Scale segment lengths to total `t_len`, keeping the curves.
    pub fn rescaled(&self, t_len: usize) -> Result<Self> {
        let total = self.t_len() as f64;
        let k = self.segment_lengths.len();
        let mut lengths: Vec<usize> = self
            .segment_lengths
            .iter()
            .map(|&l| (l as f64 * t_len as f64 / total).round() as usize)
            .collect();
        let head: usize = lengths[..k - 1].iter().sum();
        if head + 2 > t_len {
            return invalid("cannot rescale to so short a series");
        }
        lengths[k - 1] = t_len - head;
        Self::new(lengths, self.curves.clone())
    }

    /// CSV with header `segment,length,nu,power`, one row per tabulated
    /// frequency of each segment.
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (s, (len, c)) in self.segment_lengths.iter().zip(&self.curves).enumerate() {
            for (&nu, &power) in c.freqs().iter().zip(c.power()) {
                w.serialize(PiecewiseRow {
                    segment: s,
                    length: *len,
                    nu,
                    power,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut lengths: Vec<usize> = Vec::new();
        let mut tables: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (i, row) in rdr.deserialize::<PiecewiseRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                location: format!("row {}", i + 2),
                message: e.to_string(),
            })?;
            if row.segment == lengths.len() {
                lengths.push(row.length);
                tables.push((Vec::new(), Vec::new()));
            } else if row.segment + 1 != lengths.len() || lengths[row.segment] != row.length {
                return Err(Error::Parse {
                    location: format!("row {}", i + 2),
                    message: "segments must be contiguous with a constant length".into(),
                });
            }
            let t = tables.last_mut().expect("segment pushed above");
            t.0.push(row.nu);
            t.1.push(row.power);
        }
        let curves = tables
            .into_iter()
            .map(|(f, p)| SpectrumCurve::new(f, p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lengths, curves)
    }

    /// Piecewise spectrum implied by a posterior: the modal segment count,
    /// median cutpoints among states with that count, and the posterior
    /// mean spectrum averaged over each resulting segment.
    pub fn from_draws(draws: &PosteriorDraws) -> Result<Self> {
        let mean = posterior_mean_spectrum(draws)?;
        let k = draws.k_mode();
        let mut cut_samples: Vec<Vec<usize>> = vec![Vec::new(); k.saturating_sub(1)];
        for r in draws.states.iter().filter(|r| r.state.n_segments() == k) {
            for (c, v) in r.state.partition.interior().iter().zip(cut_samples.iter_mut()) {
                v.push(*c);
            }
        }
        if k > 1 && cut_samples[0].is_empty() {
            return invalid("no retained states to locate cutpoints");
        }
        let mut cuts = vec![0];
        for mut v in cut_samples {
            v.sort_unstable();
            cuts.push(v[v.len() / 2]);
        }
        cuts.push(draws.t_len);
        let nf = mean.n_freqs();
        let mut lengths = Vec::new();
        let mut curves = Vec::new();
        for w in cuts.windows(2) {
            if w[1] <= w[0] + 1 {
                return invalid("median cutpoints are not strictly increasing");
            }
            let mut acc = vec![0.0; nf];
            for t in w[0]..w[1] {
                for (a, p) in acc.iter_mut().zip(mean.row(t)) {
                    *a += p;
                }
            }
            let n = (w[1] - w[0]) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            lengths.push(w[1] - w[0]);
            curves.push(SpectrumCurve::new(mean.freq_grid().to_vec(), acc)?);
        }
        Self::new(lengths, curves)
    }
}

/// Independent syntheses per segment, concatenated.
pub fn synthesize_piecewise<R: Rng + ?Sized>(
    ps: &PiecewiseSpectrum,
    opts: SynthOptions,
    rng: &mut R,
) -> Result<TimeSeries> {
    let mut y = Vec::with_capacity(ps.t_len());
    for (len, curve) in ps.segment_lengths.iter().zip(&ps.curves) {
        y.extend(synthesize_from_spectrum(curve, *len, opts, rng)?.into_values());
    }
    TimeSeries::new(y)
}
