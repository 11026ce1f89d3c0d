//! Replicated simulation study: simulate from a known process, fit each
//! estimator, and score it against the truth on a common grid.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use crate::baselines::{fit_garch, fit_msgarch, garch_implied_tvspectrum, msgarch_implied_tvspectrum, MsGarchOptions};
use crate::error::{invalid, Error, Result};
use crate::exec::{label_seed, map_indexed, rng_from_seed, split_seed, Execution};
use crate::generators::{
    simulate_garch, simulate_regime, synthesize_piecewise, GarchParams, PiecewiseSpectrum, RegimeSpec,
    SynthOptions,
};
use crate::metrics::{mse, skl, MetricReport};
use crate::partition::PartitionConfig;
use crate::sampler::{posterior_mean_spectrum, run_chain, SamplerConfig};
use crate::spectral::{default_freq_grid, TimeSeries, TvSpectrum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dgp {
    Garch,
    Regime,
    Piecewise,
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dgp::Garch => "garch",
            Dgp::Regime => "regime",
            Dgp::Piecewise => "piecewise",
        })
    }
}

impl FromStr for Dgp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "garch" => Ok(Dgp::Garch),
            "regime" => Ok(Dgp::Regime),
            "piecewise" | "piecewise_spectrum" | "adaptspec" => Ok(Dgp::Piecewise),
            _ => invalid(format!("unknown data-generating process '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    /// Flat spectrum at the fitted GARCH unconditional variance.
    Garch,
    /// Regime-switching GARCH, smoothed-probability mixture of levels.
    Regime,
    /// Posterior mean of the piecewise nonparametric spectrum.
    AdaptSpec,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Garch, Estimator::Regime, Estimator::AdaptSpec];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Garch => "G",
            Estimator::Regime => "R",
            Estimator::AdaptSpec => "AD",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "G" | "GARCH" => Ok(Estimator::Garch),
            "R" | "REGIME" => Ok(Estimator::Regime),
            "AD" | "ADAPTSPEC" => Ok(Estimator::AdaptSpec),
            _ => invalid(format!("unknown estimator '{s}'")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dgp: Dgp,
    pub n_replicates: usize,
    pub t_len: usize,
    pub estimators: Vec<Estimator>,
    pub sampler: SamplerConfig,
    pub partition: PartitionConfig,
    pub msgarch: MsGarchOptions,
    pub master_seed: u64,
    pub n_freqs: usize,
    /// Spectrum for the piecewise process; rescaled to `t_len`. Defaults to
    /// [`PiecewiseSpectrum::reference`].
    pub piecewise: Option<PiecewiseSpectrum>,
    pub garch: GarchParams,
    pub synth: SynthOptions,
    pub exec: Execution,
}

impl ExperimentConfig {
    /// T = 1024, 20 replicates, 6000 iterations with 2000 burn-in.
    pub fn desk(dgp: Dgp) -> Self {
        Self {
            dgp,
            n_replicates: 20,
            t_len: 1024,
            estimators: Estimator::ALL.to_vec(),
            sampler: SamplerConfig {
                n_iter: 6000,
                n_burn: 2000,
                keep_states: false,
                ..SamplerConfig::default()
            },
            partition: PartitionConfig::default(),
            msgarch: MsGarchOptions::default(),
            master_seed: 1,
            n_freqs: 101,
            piecewise: None,
            garch: GarchParams::reference(),
            synth: SynthOptions::default(),
            exec: Execution::Parallel,
        }
    }

    /// T = 5000, 50 replicates, 10000 iterations with 2000 burn-in.
    pub fn paper(dgp: Dgp) -> Self {
        Self {
            n_replicates: 50,
            t_len: 5000,
            sampler: SamplerConfig {
                n_iter: 10_000,
                n_burn: 2_000,
                keep_states: false,
                ..SamplerConfig::default()
            },
            ..Self::desk(dgp)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return invalid("need at least one replicate");
        }
        if self.estimators.is_empty() {
            return invalid("no estimators requested");
        }
        if self.n_freqs < 2 {
            return invalid("evaluation grid needs at least two frequencies");
        }
        if self.estimators.contains(&Estimator::Garch) && self.t_len < 100 {
            return invalid("the GARCH estimator needs T >= 100");
        }
        if self.estimators.contains(&Estimator::Regime) && self.t_len < 500 {
            return invalid("the regime estimator needs T >= 500");
        }
        if self.t_len < self.partition.t_min {
            return invalid("T is shorter than t_min");
        }
        self.sampler.validate()?;
        self.partition.validate()?;
        self.garch.validate()?;
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        split_seed(self.master_seed, replicate as u64)
    }

    fn piecewise_spectrum(&self) -> Result<PiecewiseSpectrum> {
        match &self.piecewise {
            Some(ps) if ps.t_len() == self.t_len => Ok(ps.clone()),
            Some(ps) => ps.rescaled(self.t_len),
            None => PiecewiseSpectrum::reference(self.t_len),
        }
    }
}

/// Simulate one replicate and its ground truth on the evaluation grid.
pub fn simulate_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<(TimeSeries, TvSpectrum)> {
    let grid = default_freq_grid(cfg.n_freqs);
    let mut rng = rng_from_seed(label_seed(cfg.replicate_seed(replicate), "data"));
    match cfg.dgp {
        Dgp::Garch => {
            let y = simulate_garch(&cfg.garch, cfg.t_len, &mut rng)?;
            let truth = TvSpectrum::flat(cfg.t_len, grid, cfg.garch.sigma2_uc())?;
            Ok((y, truth))
        }
        Dgp::Regime => simulate_regime(&RegimeSpec::reference(cfg.t_len)?, &grid, &mut rng),
        Dgp::Piecewise => {
            let ps = cfg.piecewise_spectrum()?;
            let y = synthesize_piecewise(&ps, cfg.synth, &mut rng)?;
            Ok((y, ps.truth(&grid)?))
        }
    }
}

/// Fit one estimator and return its time-varying spectrum on the grid.
pub fn estimate(cfg: &ExperimentConfig, estimator: Estimator, y: &[f64], replicate: usize) -> Result<TvSpectrum> {
    let grid = default_freq_grid(cfg.n_freqs);
    let seed = cfg.replicate_seed(replicate);
    match estimator {
        Estimator::Garch => {
            let fit = fit_garch(y)?;
            garch_implied_tvspectrum(&fit.params, y.len(), &grid)
        }
        Estimator::Regime => {
            let opts = MsGarchOptions {
                seed: label_seed(seed, "regime"),
                ..cfg.msgarch
            };
            let fit = fit_msgarch(y, opts)?;
            msgarch_implied_tvspectrum(&fit.params, &fit.probs, &grid)
        }
        Estimator::AdaptSpec => {
            let scfg = SamplerConfig {
                rng_seed: label_seed(seed, "adaptspec"),
                ..cfg.sampler.clone()
            };
            let draws = run_chain(y, &scfg, &cfg.partition, &grid)?;
            posterior_mean_spectrum(&draws)
        }
    }
}

fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Vec<MetricReport> {
    let seed = cfg.replicate_seed(replicate);
    let report = |est: &str, skl: f64, mse: f64, secs: f64, error: String| MetricReport {
        dgp: cfg.dgp.to_string(),
        estimator: est.to_string(),
        replicate,
        seed,
        skl,
        mse,
        wall_time_s: secs,
        error,
    };
    let (y, truth) = match simulate_replicate(cfg, replicate) {
        Ok(v) => v,
        Err(e) => {
            return cfg
                .estimators
                .iter()
                .map(|est| report(est.label(), f64::NAN, f64::NAN, 0.0, format!("simulation: {e}")))
                .collect()
        }
    };
    cfg.estimators
        .iter()
        .map(|&est| {
            let start = Instant::now();
            let scored = estimate(cfg, est, y.values(), replicate)
                .and_then(|f| Ok((skl(&truth, &f)?, mse(&truth, &f)?)));
            let secs = start.elapsed().as_secs_f64();
            match scored {
                Ok((s, m)) => report(est.label(), s, m, secs, String::new()),
                Err(e) => {
                    log::warn!("replicate {replicate}, estimator {est}: {e}");
                    report(est.label(), f64::NAN, f64::NAN, secs, e.to_string())
                }
            }
        })
        .collect()
}

fn sort_reports(reports: &mut [MetricReport]) {
    let rank = |e: &str| Estimator::from_str(e).map_or(usize::MAX, |e| e as usize);
    reports.sort_by(|a, b| {
        (a.replicate, rank(&a.estimator), &a.estimator).cmp(&(b.replicate, rank(&b.estimator), &b.estimator))
    });
}

/// Run every replicate and return reports ordered by replicate, then
/// estimator. Failures are recorded in the report, not raised.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let mut out: Vec<MetricReport> = map_indexed(cfg.exec, cfg.n_replicates, |r| run_replicate(cfg, r))
        .into_iter()
        .flatten()
        .collect();
    sort_reports(&mut out);
    Ok(out)
}

pub fn read_reports<R: std::io::Read>(input: R) -> Result<Vec<MetricReport>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<MetricReport>().enumerate() {
        out.push(rec.map_err(|e| Error::Parse {
            location: format!("row {}", i + 2),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_reports<W: std::io::Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Like [`run_experiment`], appending each finished replicate to `path` as
/// it completes. Replicates already present in `path` (all requested
/// estimators, matching seed and process) are skipped, so an interrupted
/// run can be resumed. On completion the file is rewritten in canonical
/// order.
pub fn run_experiment_to(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let mut existing = if path.exists() {
        read_reports(File::open(path)?)?
    } else {
        Vec::new()
    };
    let dgp = cfg.dgp.to_string();
    existing.retain(|r| r.dgp == dgp && r.replicate < cfg.n_replicates && r.seed == cfg.replicate_seed(r.replicate));
    let done: BTreeSet<usize> = (0..cfg.n_replicates)
        .filter(|&rep| {
            cfg.estimators
                .iter()
                .all(|e| existing.iter().any(|r| r.replicate == rep && r.estimator == e.label()))
        })
        .collect();
    existing.retain(|r| done.contains(&r.replicate));
    if !done.is_empty() {
        log::info!("resuming: {} of {} replicates already complete", done.len(), cfg.n_replicates);
    }
    // Start the file afresh with the completed rows, then append.
    {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        for r in &existing {
            w.serialize(r)?;
        }
        if existing.is_empty() {
            w.write_record([
                "dgp",
                "estimator",
                "replicate",
                "seed",
                "skl",
                "mse",
                "wall_time_s",
                "error",
            ])?;
        }
        w.flush()?;
    }
    let sink = Mutex::new(
        csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(OpenOptions::new().append(true).open(path)?),
    );
    let todo: Vec<usize> = (0..cfg.n_replicates).filter(|r| !done.contains(r)).collect();
    let fresh: Vec<Vec<MetricReport>> = map_indexed(cfg.exec, todo.len(), |i| {
        let rows = run_replicate(cfg, todo[i]);
        let mut w = sink.lock().expect("report sink poisoned");
        for r in &rows {
            if let Err(e) = w.serialize(r) {
                log::error!("could not append report: {e}");
            }
        }
        if let Err(e) = w.flush() {
            log::error!("could not flush reports: {e}");
        }
        rows
    });
    drop(sink);
    let mut all = existing;
    all.extend(fresh.into_iter().flatten());
    sort_reports(&mut all);
    write_reports(&all, File::create(path)?)?;
    Ok(all)
}

/// Median of the finite values of `metric` for `estimator`.
pub fn median_metric(reports: &[MetricReport], estimator: Estimator, metric: fn(&MetricReport) -> f64) -> Option<f64> {
    let mut v: Vec<f64> = reports
        .iter()
        .filter(|r| r.estimator == estimator.label() && r.is_ok())
        .map(metric)
        .filter(|v| v.is_finite())
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
