//! Reversible-jump sampler over piecewise-stationary segmentations.
//!
//! The state is a partition of `1..=T` plus, for each segment, an intercept,
//! basis coefficients and a smoothing variance. Each iteration performs one
//! of four moves: birth (split a segment), death (merge two neighbours),
//! relocate (move one cutpoint) or within (refresh segment parameters, then
//! relocate). Coefficient proposals are Gaussian approximations at the
//! conditional posterior mode, so every move is an independence-type
//! proposal and its acceptance ratio is exact.

mod draws;
mod mode;
mod moves;

use std::sync::Arc;

use log::{debug, warn};

use crate::basis::{BasisCache, BasisMatrix, SegmentParams, SegmentPrior, DEFAULT_MAX_BASIS};
use crate::error::{invalid, Result};
use crate::exec::rng_from_seed;
use crate::partition::{Partition, PartitionConfig};
use crate::spectral::WhittleTerms;

pub use draws::{
    posterior_mean_spectrum, posterior_summary, read_draws, write_draws, DrawRecord,
    PosteriorDraws, PosteriorSummary, RetainedState, DRAWS_SCHEMA,
};
pub use mode::{conditional_mode, ModeFit, NewtonControl};
pub use moves::{BirthChoice, DeathChoice, MoveKind, MoveOutcome, RelocateChoice};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveProbs {
    pub birth: f64,
    pub death: f64,
    pub relocate: f64,
    pub within: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self {
            birth: 0.25,
            death: 0.25,
            relocate: 0.2,
            within: 0.3,
        }
    }
}

impl MoveProbs {
    fn as_array(&self) -> [f64; 4] {
        [self.birth, self.death, self.relocate, self.within]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub move_probs: MoveProbs,
    pub newton: NewtonControl,
    /// Half-width of the local cutpoint relocation window.
    pub relocate_window: usize,
    /// Probability of a local (rather than global) relocation.
    pub relocate_local_prob: f64,
    /// Random-walk step used when the mode search fails.
    pub rw_step: f64,
    pub rng_seed: u64,
    pub prior: SegmentPrior,
    pub max_basis: usize,
    /// When false the likelihood is switched off and the chain targets the
    /// prior; used to validate the transdimensional moves.
    pub use_likelihood: bool,
    /// Keep retained states (needed for credible bands and draw export).
    pub keep_states: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            n_burn: 2_000,
            thin: 1,
            move_probs: MoveProbs::default(),
            newton: NewtonControl::default(),
            relocate_window: 20,
            relocate_local_prob: 0.8,
            rw_step: 0.1,
            rng_seed: 0,
            prior: SegmentPrior::default(),
            max_basis: DEFAULT_MAX_BASIS,
            use_likelihood: true,
            keep_states: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.move_probs.as_array();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("move probabilities must be nonnegative");
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("move probabilities sum to {total}, expected 1"));
        }
        if self.move_probs.within <= 0.0 {
            return invalid("the within-model move must have positive probability");
        }
        if self.n_iter == 0 || self.n_burn >= self.n_iter {
            return invalid("need n_burn < n_iter");
        }
        if self.thin == 0 {
            return invalid("thin must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.relocate_local_prob) {
            return invalid("relocate_local_prob must lie in [0, 1]");
        }
        if !(self.prior.alpha_var > 0.0 && self.prior.tau_shape > 0.0 && self.prior.tau_scale > 0.0)
        {
            return invalid("prior hyperparameters must be positive");
        }
        Ok(())
    }
}

/// Complete sampler state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub partition: Partition,
    pub segments: Vec<SegmentParams>,
}

impl ModelState {
    pub fn n_segments(&self) -> usize {
        self.partition.n_segments()
    }
}

/// Likelihood ingredients for one segment.
#[derive(Clone, Debug)]
pub(crate) struct SegmentData {
    pub terms: WhittleTerms,
    pub basis: Arc<BasisMatrix>,
}

/// Per-move proposal/acceptance counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: [usize; 4],
    pub accepted: [usize; 4],
    /// Coefficient updates inside the within move.
    pub coeff_proposed: usize,
    pub coeff_accepted: usize,
    /// Within-move updates that fell back to a random walk.
    pub coeff_fallbacks: usize,
}

impl MoveStats {
    pub fn acceptance_rate(&self, kind: MoveKind) -> f64 {
        let i = kind as usize;
        if self.proposed[i] == 0 {
            0.0
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }

    pub fn coeff_acceptance_rate(&self) -> f64 {
        if self.coeff_proposed == 0 {
            0.0
        } else {
            self.coeff_accepted as f64 / self.coeff_proposed as f64
        }
    }
}

/// Shared context of one chain: data, configuration and caches.
pub struct Sampler<'a> {
    y: &'a [f64],
    cfg: &'a SamplerConfig,
    pcfg: PartitionConfig,
    max_k: usize,
    cache: Arc<BasisCache>,
}

impl<'a> Sampler<'a> {
    pub fn new(y: &'a [f64], cfg: &'a SamplerConfig, pcfg: &PartitionConfig) -> Result<Self> {
        Self::with_cache(y, cfg, pcfg, Arc::new(BasisCache::new(cfg.max_basis)))
    }

    pub fn with_cache(
        y: &'a [f64],
        cfg: &'a SamplerConfig,
        pcfg: &PartitionConfig,
        cache: Arc<BasisCache>,
    ) -> Result<Self> {
        cfg.validate()?;
        pcfg.validate()?;
        if y.len() < pcfg.t_min {
            return invalid(format!(
                "series length {} is shorter than t_min = {}",
                y.len(),
                pcfg.t_min
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("series contains non-finite values");
        }
        if cache.max_basis() != cfg.max_basis {
            return invalid("basis cache was built for a different basis size");
        }
        let max_k = pcfg.feasible_max_segments(y.len());
        if max_k < pcfg.max_segments {
            debug!(
                "at most {max_k} segments fit in T = {} with t_min = {}",
                y.len(),
                pcfg.t_min
            );
        }
        if max_k == 1 {
            warn!(
                "series of length {} admits only one segment (t_min = {})",
                y.len(),
                pcfg.t_min
            );
        }
        Ok(Self {
            y,
            cfg,
            pcfg: *pcfg,
            max_k,
            cache,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        self.cfg
    }

    pub fn partition_config(&self) -> &PartitionConfig {
        &self.pcfg
    }

    /// Largest segment count the chain may visit on this series.
    pub fn max_segments(&self) -> usize {
        self.max_k
    }

    pub(crate) fn segment_data(&self, range: std::ops::Range<usize>) -> Result<SegmentData> {
        let len = range.len();
        let terms = WhittleTerms::from_segment(&self.y[range])?;
        let basis = self.cache.get(len)?;
        Ok(SegmentData { terms, basis })
    }

    pub fn basis(&self, segment_len: usize) -> Result<Arc<BasisMatrix>> {
        self.cache.get(segment_len)
    }

    /// Whittle log-likelihood of one segment's periodogram (0 when the
    /// likelihood is switched off).
    pub(crate) fn seg_loglik(&self, data: &SegmentData, alpha0: f64, beta: &[f64]) -> f64 {
        if !self.cfg.use_likelihood {
            return 0.0;
        }
        let g = crate::basis::log_spectrum(&data.basis, alpha0, beta);
        data.terms.loglik_unchecked(&g)
    }

    /// Total log-likelihood of a state: sum over independent segments.
    pub fn state_loglik(&self, state: &ModelState) -> Result<f64> {
        let mut total = 0.0;
        for s in 0..state.n_segments() {
            let data = self.segment_data(state.partition.segment(s))?;
            let p = &state.segments[s];
            if p.beta.len() != data.basis.n_basis() {
                return invalid(format!("segment {s} has the wrong coefficient dimension"));
            }
            total += self.seg_loglik(&data, p.alpha0, &p.beta);
        }
        Ok(total)
    }

    /// Single-segment starting state: `alpha0 = log` of the mean periodogram
    /// ordinate, `beta = 0`, `tau2 = 1`.
    pub fn initial_state(&self) -> Result<ModelState> {
        let partition = Partition::single(self.y.len())?;
        let data = self.segment_data(0..self.y.len())?;
        let mean = data.terms.weighted_mean();
        let alpha0 = if self.cfg.use_likelihood && mean > 0.0 {
            mean.ln()
        } else {
            0.0
        };
        let params = SegmentParams::new(alpha0, vec![0.0; data.basis.n_basis()], 1.0)?;
        Ok(ModelState {
            partition,
            segments: vec![params],
        })
    }

    /// Check partition and parameter invariants of `state`.
    pub fn check_state(&self, state: &ModelState) -> Result<()> {
        state.partition.check(&PartitionConfig {
            t_min: self.pcfg.t_min,
            max_segments: self.max_k,
        })?;
        if state.partition.total_len() != self.y.len() {
            return invalid("partition does not cover the series");
        }
        if state.segments.len() != state.n_segments() {
            return invalid("segment parameter count differs from K");
        }
        for s in 0..state.n_segments() {
            let j = self.cache.get(state.partition.segment_len(s))?.n_basis();
            let p = &state.segments[s];
            if p.beta.len() != j || p.tau2.is_nan() || p.tau2 <= 0.0 || !p.alpha0.is_finite() {
                return invalid(format!("segment {s} parameters are invalid"));
            }
        }
        Ok(())
    }
}

/// Run one chain on `y` and accumulate the posterior spectrum on
/// `freq_grid` x `1..=T`.
pub fn run_chain(
    y: &[f64],
    cfg: &SamplerConfig,
    pcfg: &PartitionConfig,
    freq_grid: &[f64],
) -> Result<PosteriorDraws> {
    let sampler = Sampler::new(y, cfg, pcfg)?;
    run_with(&sampler, freq_grid)
}

pub fn run_with(sampler: &Sampler<'_>, freq_grid: &[f64]) -> Result<PosteriorDraws> {
    let cfg = sampler.cfg;
    if freq_grid.is_empty() {
        return invalid("output frequency grid is empty");
    }
    let mut rng = rng_from_seed(cfg.rng_seed);
    let mut state = sampler.initial_state()?;
    let mut stats = MoveStats::default();
    let mut draws = PosteriorDraws::new(sampler.y.len(), freq_grid.to_vec(), sampler.max_k, cfg.keep_states);
    for it in 0..cfg.n_iter {
        let kind = sampler.select_move(&state, &mut rng);
        let outcome = sampler.apply_move(kind, &mut state, &mut rng, &mut stats)?;
        stats.proposed[kind as usize] += usize::from(outcome.proposed);
        stats.accepted[kind as usize] += usize::from(outcome.accepted);
        if it >= cfg.n_burn && (it - cfg.n_burn).is_multiple_of(cfg.thin) {
            draws.push_state(sampler, it, &state)?;
        }
    }
    draws.stats = stats;
    Ok(draws)
}
