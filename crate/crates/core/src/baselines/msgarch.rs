//! Markov-switching GARCH(1,1) with per-regime variance recursions,
//! Hamilton filter, Kim smoother and multi-start quasi-ML fitting.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::garch::{from_free, sample_variance, to_free};
use super::simplex::{minimize, SimplexOptions};
use crate::error::{invalid, Error, Result};
use crate::exec::rng_from_seed;
use crate::generators::GarchParams;
use crate::spectral::TvSpectrum;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PROB_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct MsGarchParams {
    pub regimes: Vec<GarchParams>,
    /// Row-stochastic: `transition[i][j] = Pr(s_t = j | s_{t-1} = i)`.
    pub transition: Vec<Vec<f64>>,
}

impl MsGarchParams {
    pub fn new(regimes: Vec<GarchParams>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self {
            regimes,
            transition,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.regimes.len();
        if n == 0 {
            return invalid("need at least one regime");
        }
        for r in &self.regimes {
            r.validate()?;
        }
        if self.transition.len() != n || self.transition.iter().any(|row| row.len() != n) {
            return invalid("transition matrix must be N_R x N_R");
        }
        for row in &self.transition {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return invalid("transition probabilities must lie in [0, 1]");
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return invalid("transition rows must sum to 1");
            }
        }
        Ok(())
    }

    /// Stationary distribution of the transition matrix.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.n_regimes();
        if n == 1 {
            return Ok(vec![1.0]);
        }
        // Solve (P' - I) pi = 0 with the last equation replaced by sum(pi) = 1.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.transition[j][i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numerical("transition matrix has no unique stationary law".into()))?;
        let pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        Ok(pi.iter().map(|v| v / total).collect())
    }
}

/// How the lagged conditional variance enters each regime's recursion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VarianceCarry {
    /// Each regime carries its own variance path (path independent).
    #[default]
    PerRegime,
    /// All regimes share the filtered-probability mixture of last period's
    /// variances.
    Collapsed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeProbs {
    /// `filtered[t][j] = Pr(s_t = j | y_1..y_t)`.
    pub filtered: Vec<Vec<f64>>,
    /// `smoothed[t][j] = Pr(s_t = j | y_1..y_T)`.
    pub smoothed: Vec<Vec<f64>>,
}

impl RegimeProbs {
    /// CSV with header `t,filtered_1..,smoothed_1..`, `t` starting at 1.
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let n = self.filtered.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("filtered_{j}")));
        header.extend((1..=n).map(|j| format!("smoothed_{j}")));
        w.write_record(&header)?;
        for (t, (f, s)) in self.filtered.iter().zip(&self.smoothed).enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(f.iter().chain(s).map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let cols = rdr.headers()?.len();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return invalid("probability table needs t plus filtered and smoothed columns");
        }
        let n = (cols - 1) / 2;
        let mut filtered = Vec::new();
        let mut smoothed = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    location: format!("row {}", i + 2),
                    message: e.to_string(),
                })?;
            filtered.push(vals[..n].to_vec());
            smoothed.push(vals[n..].to_vec());
        }
        Ok(Self { filtered, smoothed })
    }
}

fn normalize_log(logw: &mut [f64]) -> f64 {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logw.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in logw.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// Forward filter with every regime's variance started at the sample
/// variance of `y`. Returns filtered probabilities and the log-likelihood.
pub fn hamilton_filter(y: &[f64], params: &MsGarchParams) -> Result<(Vec<Vec<f64>>, f64)> {
    hamilton_filter_with(y, params, VarianceCarry::PerRegime)
}

pub fn hamilton_filter_with(
    y: &[f64],
    params: &MsGarchParams,
    carry: VarianceCarry,
) -> Result<(Vec<Vec<f64>>, f64)> {
    params.validate()?;
    if y.len() < 2 {
        return invalid("filter needs at least two observations");
    }
    let (filtered, ll) = filter_unchecked(y, params, carry, &params.stationary()?);
    if !ll.is_finite() || filtered.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("filter produced non-finite values".into()));
    }
    Ok((filtered, ll))
}

fn filter_unchecked(
    y: &[f64],
    params: &MsGarchParams,
    carry: VarianceCarry,
    init: &[f64],
) -> (Vec<Vec<f64>>, f64) {
    let n = params.n_regimes();
    let p = &params.transition;
    let mut h = vec![sample_variance(y); n];
    let mut prob = init.to_vec();
    let mut out = Vec::with_capacity(y.len());
    let mut ll = 0.0;
    let mut logw = vec![0.0; n];
    for (t, &v) in y.iter().enumerate() {
        if t > 0 {
            let prev = y[t - 1];
            match carry {
                VarianceCarry::PerRegime => {
                    for (hj, r) in h.iter_mut().zip(&params.regimes) {
                        let eta = prev - r.mu;
                        *hj = r.alpha0 + r.alpha1 * eta * eta + r.beta1 * *hj;
                    }
                }
                VarianceCarry::Collapsed => {
                    let filt = out.last().expect("previous row");
                    let (m, s): (f64, f64) = params
                        .regimes
                        .iter()
                        .zip(filt as &Vec<f64>)
                        .zip(&h)
                        .fold((0.0, 0.0), |(m, s), ((r, w), hj)| (m + w * r.mu, s + w * (hj + r.mu * r.mu)));
                    let shared = (s - m * m).max(f64::MIN_POSITIVE);
                    for (hj, r) in h.iter_mut().zip(&params.regimes) {
                        let eta = prev - r.mu;
                        *hj = r.alpha0 + r.alpha1 * eta * eta + r.beta1 * shared;
                    }
                }
            }
            let last: &Vec<f64> = out.last().expect("previous row");
            for j in 0..n {
                prob[j] = (0..n).map(|i| last[i] * p[i][j]).sum();
            }
        }
        for j in 0..n {
            let r = &params.regimes[j];
            let eta = v - r.mu;
            logw[j] = prob[j].max(PROB_FLOOR).ln() - 0.5 * (LN_2PI + h[j].ln() + eta * eta / h[j]);
        }
        ll += normalize_log(&mut logw);
        out.push(logw.clone());
    }
    (out, ll)
}

/// Backward smoothing pass.
pub fn kim_smoother(filtered: &[Vec<f64>], transition: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let t_len = filtered.len();
    if t_len == 0 {
        return invalid("no filtered probabilities");
    }
    let n = transition.len();
    if filtered.iter().any(|r| r.len() != n) {
        return invalid("filtered rows do not match the transition matrix");
    }
    let mut smoothed = vec![vec![0.0; n]; t_len];
    smoothed[t_len - 1] = filtered[t_len - 1].clone();
    for t in (0..t_len - 1).rev() {
        let f = &filtered[t];
        let pred: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| f[i] * transition[i][j]).sum::<f64>().max(PROB_FLOOR))
            .collect();
        let mut row: Vec<f64> = (0..n)
            .map(|i| {
                f[i] * (0..n)
                    .map(|j| transition[i][j] * smoothed[t + 1][j] / pred[j])
                    .sum::<f64>()
            })
            .collect();
        let total: f64 = row.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!("smoother degenerated at t = {}", t + 1)));
        }
        row.iter_mut().for_each(|v| *v /= total);
        smoothed[t] = row;
    }
    Ok(smoothed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsGarchOptions {
    pub n_regimes: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub simplex: SimplexOptions,
    pub carry: VarianceCarry,
}

impl Default for MsGarchOptions {
    fn default() -> Self {
        Self {
            n_regimes: 2,
            n_starts: 5,
            seed: 0,
            simplex: SimplexOptions::default(),
            carry: VarianceCarry::PerRegime,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsGarchFit {
    pub params: MsGarchParams,
    pub probs: RegimeProbs,
    pub loglik: f64,
    pub converged: bool,
}

fn encode(p: &MsGarchParams) -> Vec<f64> {
    let n = p.n_regimes();
    let mut x = Vec::with_capacity(4 * n + n * (n - 1));
    for r in &p.regimes {
        x.extend_from_slice(&to_free(r));
    }
    // Each row as logits relative to its last entry.
    for row in &p.transition {
        let last = row[n - 1].max(1e-12);
        for &v in &row[..n - 1] {
            x.push((v.max(1e-12) / last).ln());
        }
    }
    x
}

fn decode(x: &[f64], n: usize) -> MsGarchParams {
    let regimes = (0..n).map(|j| from_free(&x[4 * j..4 * j + 4])).collect();
    let mut transition = Vec::with_capacity(n);
    let base = 4 * n;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                if j + 1 == n {
                    0.0
                } else {
                    x[base + i * (n - 1) + j]
                }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut row: Vec<f64> = e.iter().map(|v| v / s).collect();
        // Put the rounding residue on the largest entry so the row sums to 1.
        let imax = (0..n).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        let rest: f64 = (0..n).filter(|&j| j != imax).map(|j| row[j]).sum();
        row[imax] = 1.0 - rest;
        transition.push(row);
    }
    MsGarchParams {
        regimes,
        transition,
    }
}

/// Relabel regimes in increasing order of unconditional variance.
fn sort_regimes(p: &MsGarchParams, probs: &RegimeProbs) -> (MsGarchParams, RegimeProbs) {
    let n = p.n_regimes();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p.regimes[a].sigma2_uc().total_cmp(&p.regimes[b].sigma2_uc()));
    let regimes = order.iter().map(|&i| p.regimes[i]).collect();
    let transition = order
        .iter()
        .map(|&i| order.iter().map(|&j| p.transition[i][j]).collect())
        .collect();
    let permute = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| order.iter().map(|&j| r[j]).collect())
            .collect()
    };
    (
        MsGarchParams {
            regimes,
            transition,
        },
        RegimeProbs {
            filtered: permute(&probs.filtered),
            smoothed: permute(&probs.smoothed),
        },
    )
}

/// Moment-based starting point: unconditional variances spread around the
/// sample variance, moderate persistence and sticky transitions.
fn initial_params(y: &[f64], n: usize) -> MsGarchParams {
    let var = sample_variance(y);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let regimes = (0..n)
        .map(|j| {
            let scale = if n == 1 {
                1.0
            } else {
                0.6 * (2.0f64 / 0.6).powf(j as f64 / (n - 1) as f64)
            };
            let pers = 0.3;
            GarchParams {
                mu: mean,
                alpha0: scale * var * (1.0 - pers),
                alpha1: 0.15,
                beta1: 0.15,
            }
        })
        .collect();
    let stay = if n == 1 { 1.0 } else { 0.98 };
    let transition = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { stay } else { (1.0 - stay) / (n - 1) as f64 })
                .collect()
        })
        .collect();
    MsGarchParams {
        regimes,
        transition,
    }
}

/// Quasi-ML over all regime parameters and transition logits, best of
/// `n_starts` Nelder-Mead runs from perturbed moment-based starts.
pub fn fit_msgarch(y: &[f64], opts: MsGarchOptions) -> Result<MsGarchFit> {
    let n = opts.n_regimes;
    if n == 0 {
        return invalid("need at least one regime");
    }
    if y.len() < 500 {
        return invalid(format!("regime-switching fit needs T >= 500, got {}", y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) || sample_variance(y) <= 0.0 {
        return invalid("series must be finite with positive variance");
    }
    let x0 = encode(&initial_params(y, n));
    let mut rng = rng_from_seed(opts.seed);
    let objective = |x: &[f64]| -> f64 {
        let p = decode(x, n);
        let Ok(init) = p.stationary() else {
            return f64::INFINITY;
        };
        let (_, ll) = filter_unchecked(y, &p, opts.carry, &init);
        -ll
    };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in 0..opts.n_starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            x0.clone()
        } else {
            x0.iter()
                .map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let r = minimize(objective, &start, opts.simplex);
        if r.value.is_finite() && best.as_ref().is_none_or(|b| r.value < b.1) {
            best = Some((r.x, r.value, r.converged));
        }
    }
    let (x, value, converged) =
        best.ok_or_else(|| Error::Numerical("every start of the regime-switching fit failed".into()))?;
    if !converged {
        log::warn!("regime-switching fit did not meet tolerance; returning best parameters found");
    }
    let params = decode(&x, n);
    let (filtered, ll) = hamilton_filter_with(y, &params, opts.carry)?;
    debug_assert!((ll + value).abs() <= 1e-8 * (1.0 + value.abs()));
    let smoothed = kim_smoother(&filtered, &params.transition)?;
    let (params, probs) = sort_regimes(&params, &RegimeProbs { filtered, smoothed });
    Ok(MsGarchFit {
        params,
        probs,
        loglik: ll,
        converged,
    })
}

/// `f(nu, t) = sum_j Pr(s_t = j | y) sigma2_uc(j)`, flat in frequency.
pub fn msgarch_implied_tvspectrum(
    params: &MsGarchParams,
    probs: &RegimeProbs,
    freq_grid: &[f64],
) -> Result<TvSpectrum> {
    params.validate()?;
    let levels: Vec<f64> = params.regimes.iter().map(GarchParams::sigma2_uc).collect();
    if probs.smoothed.is_empty() || probs.smoothed.iter().any(|r| r.len() != levels.len()) {
        return invalid("smoothed probabilities do not match the regimes");
    }
    let nf = freq_grid.len();
    let mut power = Vec::with_capacity(probs.smoothed.len() * nf);
    for row in &probs.smoothed {
        let v: f64 = row.iter().zip(&levels).map(|(w, l)| w * l).sum();
        power.extend(std::iter::repeat_n(v, nf));
    }
    TvSpectrum::new((1..=probs.smoothed.len()).collect(), freq_grid.to_vec(), power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::garch::garch_loglik;
    use crate::generators::simulate_garch;

    fn two_regime(p11: f64, p22: f64) -> MsGarchParams {
        MsGarchParams::new(
            vec![GarchParams::reference(), GarchParams::reference_high()],
            vec![vec![p11, 1.0 - p11], vec![1.0 - p22, p22]],
        )
        .unwrap()
    }

    #[test]
    fn stationary_distribution_two_state() {
        let p = two_regime(0.9, 0.7);
        let pi = p.stationary().unwrap();
        // pi_1 = (1 - p22) / (2 - p11 - p22)
        assert!((pi[0] - 0.3 / 0.4).abs() < 1e-12);
        assert!((pi[1] - 0.1 / 0.4).abs() < 1e-12);
    }

    #[test]
    fn encoding_round_trips() {
        let p = two_regime(0.95, 0.8);
        let q = decode(&encode(&p), 2);
        for (a, b) in p.transition.iter().flatten().zip(q.transition.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        q.validate().unwrap();
    }

    #[test]
    fn one_regime_reduces_to_garch() {
        let y = simulate_garch(&GarchParams::reference(), 400, &mut rng_from_seed(3))
            .unwrap()
            .into_values();
        let p = MsGarchParams::new(vec![GarchParams::reference()], vec![vec![1.0]]).unwrap();
        let (filt, ll) = hamilton_filter(&y, &p).unwrap();
        assert!((ll - garch_loglik(&y, &GarchParams::reference()).unwrap()).abs() < 1e-8);
        assert!(filt.iter().all(|r| r[0] == 1.0));
    }

    #[test]
    fn identical_regimes_leave_probabilities_at_stationary_law() {
        let y = simulate_garch(&GarchParams::reference(), 300, &mut rng_from_seed(1))
            .unwrap()
            .into_values();
        let pi = [0.3, 0.7];
        let p = MsGarchParams::new(
            vec![GarchParams::reference(); 2],
            vec![pi.to_vec(), pi.to_vec()],
        )
        .unwrap();
        let (filt, _) = hamilton_filter(&y, &p).unwrap();
        let smooth = kim_smoother(&filt, &p.transition).unwrap();
        for (f, s) in filt.iter().zip(&smooth) {
            for j in 0..2 {
                assert!((f[j] - pi[j]).abs() < 1e-12);
                assert!((s[j] - f[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoother_single_step_is_filter() {
        let filt = vec![vec![0.2, 0.8]];
        let s = kim_smoother(&filt, &[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(s, filt);
    }

    #[test]
    fn implied_spectrum_is_convex_combination() {
        let p = two_regime(0.9, 0.9);
        let probs = RegimeProbs {
            filtered: vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            smoothed: vec![vec![0.5, 0.5], vec![1.0, 0.0]],
        };
        let s = msgarch_implied_tvspectrum(&p, &probs, &[0.0, 0.25, 0.5]).unwrap();
        assert!((s.get(0, 1) - 1.625).abs() < 1e-12);
        assert!((s.get(1, 2) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn probability_table_round_trip() {
        let probs = RegimeProbs {
            filtered: vec![vec![0.25, 0.75], vec![0.1, 0.9]],
            smoothed: vec![vec![0.3, 0.7], vec![0.1, 0.9]],
        };
        let mut buf = Vec::new();
        probs.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,filtered_1,filtered_2,smoothed_1,smoothed_2\n"));
        assert_eq!(RegimeProbs::read(buf.as_slice()).unwrap(), probs);
    }

    #[test]
    fn rejects_bad_transition() {
        assert!(MsGarchParams::new(
            vec![GarchParams::reference(); 2],
            vec![vec![0.5, 0.6], vec![0.5, 0.5]]
        )
        .is_err());
    }
}
