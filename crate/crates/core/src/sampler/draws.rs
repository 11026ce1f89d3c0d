//! Posterior accumulation and the line-delimited draw format.
//!
//! Draw files start with one header line
//! `{"schema":"tvspec-draws","version":1,"t_len":T}` followed by one record
//! per retained iteration:
//! `{"iteration":i,"k":K,"cutpoints":[0,..,T],"segments":[{"alpha0":..,"tau2":..,"beta":[..]},..]}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ModelState, MoveStats, Sampler};
use crate::basis::{log_spectrum, render_on_grid, SegmentParams};
use crate::error::{invalid, Error, Result};
use crate::spectral::TvSpectrum;

pub const DRAWS_SCHEMA: &str = "tvspec-draws";
pub const DRAWS_VERSION: u32 = 1;

/// One retained state with its per-segment spectra rendered on the output
/// frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RetainedState {
    pub iteration: usize,
    pub state: ModelState,
    /// `curves[s][f]`: power of segment `s` at output frequency `f`.
    pub curves: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PosteriorDraws {
    pub t_len: usize,
    pub freq_grid: Vec<f64>,
    /// Retained states (empty when states are not kept).
    pub states: Vec<RetainedState>,
    /// `k_counts[k]`: retained states with `k` segments.
    pub k_counts: Vec<usize>,
    pub n_retained: usize,
    /// Segment count of every retained state, in order.
    pub k_trace: Vec<usize>,
    pub stats: MoveStats,
    keep_states: bool,
    // Difference arrays over time, (t_len + 1) x n_freq.
    sum_diff: Vec<f64>,
    sumsq_diff: Vec<f64>,
}

impl PosteriorDraws {
    pub fn new(t_len: usize, freq_grid: Vec<f64>, max_k: usize, keep_states: bool) -> Self {
        let nf = freq_grid.len();
        Self {
            t_len,
            freq_grid,
            states: Vec::new(),
            k_counts: vec![0; max_k + 1],
            n_retained: 0,
            k_trace: Vec::new(),
            stats: MoveStats::default(),
            keep_states,
            sum_diff: vec![0.0; (t_len + 1) * nf],
            sumsq_diff: vec![0.0; (t_len + 1) * nf],
        }
    }

    pub fn keeps_states(&self) -> bool {
        self.keep_states
    }

    pub fn push_state(&mut self, sampler: &Sampler<'_>, iteration: usize, state: &ModelState) -> Result<()> {
        let mut curves = Vec::with_capacity(state.n_segments());
        for s in 0..state.n_segments() {
            let basis = sampler.basis(state.partition.segment_len(s))?;
            let p = &state.segments[s];
            let g = log_spectrum(&basis, p.alpha0, &p.beta);
            let f: Vec<f64> = render_on_grid(&basis, &g, &self.freq_grid)
                .into_iter()
                .map(f64::exp)
                .collect();
            curves.push(f);
        }
        self.add(iteration, state, curves)
    }

    fn add(&mut self, iteration: usize, state: &ModelState, curves: Vec<Vec<f64>>) -> Result<()> {
        let k = state.n_segments();
        if k >= self.k_counts.len() {
            self.k_counts.resize(k + 1, 0);
        }
        if state.partition.total_len() != self.t_len {
            return invalid("state does not cover the accumulator's time range");
        }
        let nf = self.freq_grid.len();
        for (s, curve) in curves.iter().enumerate() {
            let r = state.partition.segment(s);
            let (a, b) = (r.start * nf, r.end * nf);
            for (f, &v) in curve.iter().enumerate() {
                self.sum_diff[a + f] += v;
                self.sum_diff[b + f] -= v;
                self.sumsq_diff[a + f] += v * v;
                self.sumsq_diff[b + f] -= v * v;
            }
        }
        self.k_counts[k] += 1;
        self.k_trace.push(k);
        self.n_retained += 1;
        if self.keep_states {
            self.states.push(RetainedState {
                iteration,
                state: state.clone(),
                curves,
            });
        }
        Ok(())
    }

    fn integrate(&self, diff: &[f64]) -> Vec<f64> {
        let nf = self.freq_grid.len();
        let mut out = vec![0.0; self.t_len * nf];
        let mut run = vec![0.0; nf];
        for t in 0..self.t_len {
            for f in 0..nf {
                run[f] += diff[t * nf + f];
                out[t * nf + f] = run[f];
            }
        }
        out
    }

    /// Sum of retained spectra, time-major on `1..=T` x output grid.
    pub fn spectrum_sum(&self) -> Vec<f64> {
        self.integrate(&self.sum_diff)
    }

    pub fn spectrum_sumsq(&self) -> Vec<f64> {
        self.integrate(&self.sumsq_diff)
    }

    /// Posterior probability of each segment count.
    pub fn k_probabilities(&self) -> Vec<f64> {
        let n = self.n_retained.max(1) as f64;
        self.k_counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Most frequent segment count.
    pub fn k_mode(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.k_counts.iter().enumerate() {
            if c > self.k_counts[best] {
                best = k;
            }
        }
        best
    }

    /// Combine accumulators of independent chains on the same grid.
    pub fn merge(&mut self, other: PosteriorDraws) -> Result<()> {
        if other.t_len != self.t_len || other.freq_grid != self.freq_grid {
            return invalid("cannot merge draws on different grids");
        }
        if other.k_counts.len() > self.k_counts.len() {
            self.k_counts.resize(other.k_counts.len(), 0);
        }
        for (a, b) in self.k_counts.iter_mut().zip(&other.k_counts) {
            *a += b;
        }
        for (a, b) in self.sum_diff.iter_mut().zip(&other.sum_diff) {
            *a += b;
        }
        for (a, b) in self.sumsq_diff.iter_mut().zip(&other.sumsq_diff) {
            *a += b;
        }
        self.n_retained += other.n_retained;
        self.k_trace.extend(other.k_trace);
        for i in 0..4 {
            self.stats.proposed[i] += other.stats.proposed[i];
            self.stats.accepted[i] += other.stats.accepted[i];
        }
        self.stats.coeff_proposed += other.stats.coeff_proposed;
        self.stats.coeff_accepted += other.stats.coeff_accepted;
        self.stats.coeff_fallbacks += other.stats.coeff_fallbacks;
        self.keep_states &= other.keep_states;
        if self.keep_states {
            self.states.extend(other.states);
        } else {
            self.states.clear();
        }
        Ok(())
    }
}

/// Pointwise posterior mean of the spectrum on `1..=T` x output grid.
pub fn posterior_mean_spectrum(draws: &PosteriorDraws) -> Result<TvSpectrum> {
    if draws.n_retained == 0 {
        return Err(Error::InvalidInput("no retained draws".into()));
    }
    let n = draws.n_retained as f64;
    let mut power = draws.spectrum_sum();
    power.iter_mut().for_each(|v| *v /= n);
    TvSpectrum::new((1..=draws.t_len).collect(), draws.freq_grid.clone(), power)
}

/// Mean, variance and central 90% band, all time-major on `1..=T` x grid.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub mean: TvSpectrum,
    pub variance: Vec<f64>,
    /// Present only when retained states were kept.
    pub lower90: Option<Vec<f64>>,
    pub upper90: Option<Vec<f64>>,
}

/// Type-7 quantile of `v` (reordered in place).
fn quantile_in_place(v: &mut [f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, a, rest) = v.select_nth_unstable_by(lo, f64::total_cmp);
    let a = *a;
    if frac == 0.0 || rest.is_empty() {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

pub fn posterior_summary(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    let mean = posterior_mean_spectrum(draws)?;
    let n = draws.n_retained as f64;
    let variance: Vec<f64> = draws
        .spectrum_sumsq()
        .iter()
        .zip(mean.power())
        .map(|(s, m)| (s / n - m * m).max(0.0))
        .collect();
    let (lower90, upper90) = if draws.keep_states && !draws.states.is_empty() {
        let (lo, hi) = bands(draws, 0.05, 0.95);
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    Ok(PosteriorSummary {
        mean,
        variance,
        lower90,
        upper90,
    })
}

fn bands(draws: &PosteriorDraws, p_lo: f64, p_hi: f64) -> (Vec<f64>, Vec<f64>) {
    let nf = draws.freq_grid.len();
    let t_len = draws.t_len;
    // The segment covering t changes only at some state's cutpoint, so
    // quantiles are computed once per block between consecutive cutpoints.
    let mut breaks: Vec<usize> = draws
        .states
        .iter()
        .flat_map(|r| r.state.partition.cutpoints().iter().copied())
        .collect();
    breaks.sort_unstable();
    breaks.dedup();
    let mut lower = vec![0.0; t_len * nf];
    let mut upper = vec![0.0; t_len * nf];
    let mut column = vec![0.0; draws.states.len()];
    for w in breaks.windows(2) {
        let (start, end) = (w[0], w[1]);
        let segs: Vec<usize> = draws
            .states
            .iter()
            .map(|r| r.state.partition.segment_of(start))
            .collect();
        for f in 0..nf {
            for (c, (r, &s)) in column.iter_mut().zip(draws.states.iter().zip(&segs)) {
                *c = r.curves[s][f];
            }
            let lo = quantile_in_place(&mut column, p_lo);
            let hi = quantile_in_place(&mut column, p_hi);
            for t in start..end {
                lower[t * nf + f] = lo;
                upper[t * nf + f] = hi;
            }
        }
    }
    (lower, upper)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub alpha0: f64,
    pub tau2: f64,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iteration: usize,
    pub k: usize,
    pub cutpoints: Vec<usize>,
    pub segments: Vec<SegmentRecord>,
}

impl DrawRecord {
    pub fn from_retained(r: &RetainedState) -> Self {
        Self {
            iteration: r.iteration,
            k: r.state.n_segments(),
            cutpoints: r.state.partition.cutpoints().to_vec(),
            segments: r
                .state
                .segments
                .iter()
                .map(|p| SegmentRecord {
                    alpha0: p.alpha0,
                    tau2: p.tau2,
                    beta: p.beta.clone(),
                })
                .collect(),
        }
    }

    pub fn to_state(&self) -> Result<ModelState> {
        let partition = crate::partition::Partition::new(self.cutpoints.clone())?;
        if partition.n_segments() != self.k || self.segments.len() != self.k {
            return invalid(format!("record {} has inconsistent K", self.iteration));
        }
        let segments = self
            .segments
            .iter()
            .map(|s| SegmentParams::new(s.alpha0, s.beta.clone(), s.tau2))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelState {
            partition,
            segments,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DrawsHeader {
    schema: String,
    version: u32,
    t_len: usize,
}

pub fn write_draws<W: Write>(draws: &PosteriorDraws, mut out: W) -> Result<()> {
    let header = DrawsHeader {
        schema: DRAWS_SCHEMA.into(),
        version: DRAWS_VERSION,
        t_len: draws.t_len,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &draws.states {
        serde_json::to_writer(&mut out, &DrawRecord::from_retained(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a draw file; returns the series length and the records.
pub fn read_draws<R: BufRead>(input: R) -> Result<(usize, Vec<DrawRecord>)> {
    let mut lines = input.lines().enumerate();
    let header: DrawsHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
            location: "line 1".into(),
            message: e.to_string(),
        })?,
        None => return invalid("draw file is empty"),
    };
    if header.schema != DRAWS_SCHEMA || header.version != DRAWS_VERSION {
        return invalid(format!(
            "unsupported draw schema {} v{}",
            header.schema, header.version
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        if rec.cutpoints.last() != Some(&header.t_len) {
            return Err(Error::Parse {
                location: format!("line {}", i + 1),
                message: "cutpoints do not end at T".into(),
            });
        }
        records.push(rec);
    }
    Ok((header.t_len, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantile_matches_definition() {
        let mut v: Vec<f64> = (1..=10).map(f64::from).collect();
        // h = 9 * 0.05 = 0.45 -> 1 + 0.45
        assert!((quantile_in_place(&mut v, 0.05) - 1.45).abs() < 1e-12);
        let mut v: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert!((quantile_in_place(&mut v, 0.95) - 9.55).abs() < 1e-12);
        let mut v = vec![3.0];
        assert_eq!(quantile_in_place(&mut v, 0.95), 3.0);
    }
}
