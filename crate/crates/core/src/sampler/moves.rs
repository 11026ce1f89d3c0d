use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::mode::{newton_mode, ModeFit, Objective};
use super::{ModelState, MoveStats, Sampler, SegmentData};
use crate::basis::{log_prior_segment, SegmentParams};
use crate::error::{Error, Result};
use crate::partition::{log_prior_partition, LocationRange, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Birth = 0,
    Death = 1,
    Relocate = 2,
    Within = 3,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::Relocate,
        MoveKind::Within,
    ];
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MoveOutcome {
    /// False when the move was infeasible and skipped.
    pub proposed: bool,
    pub accepted: bool,
    pub log_ratio: f64,
}

impl MoveOutcome {
    fn skipped() -> Self {
        Self::default()
    }
}

/// Random choices of a birth move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BirthChoice {
    /// 0-based index of the segment to split.
    pub segment: usize,
    /// Absolute position of the new cutpoint.
    pub cutpoint: usize,
    /// Smoothing-variance split variable in (0, 1).
    pub u: f64,
}

/// Random choices of a death move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeathChoice {
    /// Index into the cutpoint vector (1..K-1) of the cutpoint to remove.
    pub cutpoint_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelocateChoice {
    pub cutpoint_index: usize,
    pub position: usize,
}

fn coeffs_of(p: &SegmentParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.beta.len() + 1);
    v.push(p.alpha0);
    v.extend_from_slice(&p.beta);
    v
}

fn params_from(coeffs: &[f64], tau2: f64) -> SegmentParams {
    SegmentParams {
        alpha0: coeffs[0],
        beta: coeffs[1..].to_vec(),
        tau2,
    }
}

/// Log Jacobian of `(tau2, u) -> (tau2 u/(1-u), tau2 (1-u)/u)`.
pub(crate) fn split_log_jacobian(tau2: f64, u: f64) -> f64 {
    (2.0 * tau2 / (u * (1.0 - u))).ln()
}

pub(crate) fn split_tau2(tau2: f64, u: f64) -> (f64, f64) {
    (tau2 * u / (1.0 - u), tau2 * (1.0 - u) / u)
}

/// Inverse of [`split_tau2`]: `(tau2, u)`.
pub(crate) fn merge_tau2(tau2_left: f64, tau2_right: f64) -> (f64, f64) {
    let (a, b) = (tau2_left.sqrt(), tau2_right.sqrt());
    ((tau2_left * tau2_right).sqrt(), a / (a + b))
}

struct SplitMerge<'s> {
    merged: &'s ModelState,
    split: &'s ModelState,
    /// Index of the parent segment in `merged`; children are `parent` and
    /// `parent + 1` in `split`.
    parent: usize,
    parent_data: &'s SegmentData,
    child_data: [&'s SegmentData; 2],
    log_q_parent: f64,
    log_q_children: f64,
}

impl<'a> Sampler<'a> {
    /// Segments long enough to be split in two.
    pub fn splittable_segments(&self, state: &ModelState) -> Vec<usize> {
        if state.n_segments() >= self.max_k {
            return Vec::new();
        }
        (0..state.n_segments())
            .filter(|&s| state.partition.segment_len(s) >= 2 * self.pcfg.t_min)
            .collect()
    }

    /// Move probabilities with infeasible moves removed and the remaining
    /// mass renormalized.
    pub fn move_probabilities(&self, state: &ModelState) -> [f64; 4] {
        let base = self.cfg.move_probs.as_array();
        let k = state.n_segments();
        let feasible = [
            !self.splittable_segments(state).is_empty(),
            k > 1,
            k > 1,
            true,
        ];
        let mut p = [0.0; 4];
        for i in 0..4 {
            if feasible[i] {
                p[i] = base[i];
            }
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    pub(crate) fn select_move<R: Rng + ?Sized>(&self, state: &ModelState, rng: &mut R) -> MoveKind {
        let p = self.move_probabilities(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for kind in MoveKind::ALL {
            acc += p[kind as usize];
            if u < acc && p[kind as usize] > 0.0 {
                return kind;
            }
        }
        MoveKind::Within
    }

    pub(crate) fn apply_move<R: Rng>(
        &self,
        kind: MoveKind,
        state: &mut ModelState,
        rng: &mut R,
        stats: &mut MoveStats,
    ) -> Result<MoveOutcome> {
        let (candidate, outcome) = match kind {
            MoveKind::Birth => self.propose_birth(state, rng)?,
            MoveKind::Death => self.propose_death(state, rng)?,
            MoveKind::Relocate => self.propose_relocate(state, rng)?,
            MoveKind::Within => return self.update_within(state, rng, stats),
        };
        let outcome = self.accept(candidate, outcome, state, rng);
        Ok(outcome)
    }

    fn accept<R: Rng + ?Sized>(
        &self,
        candidate: Option<ModelState>,
        mut outcome: MoveOutcome,
        state: &mut ModelState,
        rng: &mut R,
    ) -> MoveOutcome {
        if let Some(c) = candidate {
            let u: f64 = rng.random();
            if u.ln() < outcome.log_ratio {
                *state = c;
                outcome.accepted = true;
            }
        }
        outcome
    }

    fn canonical_start(&self, data: &SegmentData) -> Vec<f64> {
        let mut start = vec![0.0; data.basis.n_basis() + 1];
        if self.cfg.use_likelihood {
            let m = data.terms.weighted_mean();
            if m > 0.0 {
                start[0] = m.ln();
            }
        }
        start
    }

    /// Conditional mode from a canonical start, so that the proposal used in
    /// a forward move and the one used to evaluate its reverse coincide.
    pub(crate) fn mode_fit(&self, data: &SegmentData, tau2: f64) -> Result<ModeFit> {
        let obj = Objective {
            terms: if self.cfg.use_likelihood {
                Some(&data.terms)
            } else {
                None
            },
            basis: &data.basis,
            tau2,
            prior: &self.cfg.prior,
        };
        newton_mode(&obj, &self.canonical_start(data), self.cfg.newton)
    }

    /// Log-likelihood plus full log prior of one segment.
    fn seg_log_target(&self, data: &SegmentData, p: &SegmentParams) -> f64 {
        self.seg_loglik(data, p.alpha0, &p.beta) + log_prior_segment(p, &self.cfg.prior)
    }

    fn log_prior_partition(&self, p: &Partition) -> Result<f64> {
        log_prior_partition(p, &self.pcfg)
    }

    /// Log acceptance ratio of splitting `merged` into `split`.
    fn birth_log_ratio(&self, sm: &SplitMerge<'_>) -> Result<f64> {
        let parent = &sm.merged.segments[sm.parent];
        let children = [&sm.split.segments[sm.parent], &sm.split.segments[sm.parent + 1]];
        let target = self.seg_log_target(sm.child_data[0], children[0])
            + self.seg_log_target(sm.child_data[1], children[1])
            - self.seg_log_target(sm.parent_data, parent);
        let partition =
            self.log_prior_partition(&sm.split.partition)? - self.log_prior_partition(&sm.merged.partition)?;

        let p_death = self.move_probabilities(sm.split)[MoveKind::Death as usize];
        let p_birth = self.move_probabilities(sm.merged)[MoveKind::Birth as usize];
        let n_split = self.splittable_segments(sm.merged).len() as f64;
        let n_pos = (sm.merged.partition.segment_len(sm.parent) - 2 * self.pcfg.t_min + 1) as f64;
        let n_cut_after = (sm.split.n_segments() - 1) as f64;
        let choice = p_death.ln() - n_cut_after.ln() - (p_birth.ln() - n_split.ln() - n_pos.ln());

        let (tau2, u) = merge_tau2(children[0].tau2, children[1].tau2);
        debug_assert!((tau2 - parent.tau2).abs() <= 1e-9 * parent.tau2.max(1.0));
        let jac = split_log_jacobian(parent.tau2, u);

        Ok(target + partition + choice + sm.log_q_parent - sm.log_q_children + jac)
    }

    /// Birth with fixed choices and child coefficients `[alpha0, beta..]`.
    /// Returns the proposed state and its log acceptance ratio.
    pub fn birth_with(
        &self,
        state: &ModelState,
        choice: BirthChoice,
        child_coeffs: Option<[Vec<f64>; 2]>,
        rng: &mut impl Rng,
    ) -> Result<(ModelState, f64)> {
        let s = choice.segment;
        if s >= state.n_segments() {
            return Err(Error::InvalidInput(format!("no segment {s}")));
        }
        let seg = state.partition.segment(s);
        let t_min = self.pcfg.t_min;
        if seg.len() < 2 * t_min
            || choice.cutpoint < seg.start + t_min
            || choice.cutpoint > seg.end - t_min
        {
            return Err(Error::InvalidInput("birth cutpoint violates t_min".into()));
        }
        if !(choice.u > 0.0 && choice.u < 1.0) {
            return Err(Error::InvalidInput("u must lie in (0, 1)".into()));
        }
        let parent = &state.segments[s];
        let (tau_l, tau_r) = split_tau2(parent.tau2, choice.u);
        let parent_data = self.segment_data(seg.clone())?;
        let data_l = self.segment_data(seg.start..choice.cutpoint)?;
        let data_r = self.segment_data(choice.cutpoint..seg.end)?;
        let fit_parent = self.mode_fit(&parent_data, parent.tau2)?;
        let fit_l = self.mode_fit(&data_l, tau_l)?;
        let fit_r = self.mode_fit(&data_r, tau_r)?;
        let [cl, cr] = match child_coeffs {
            Some(c) => c,
            None => [
                fit_l.sample(rng).as_slice().to_vec(),
                fit_r.sample(rng).as_slice().to_vec(),
            ],
        };
        if cl.len() != fit_l.dim() || cr.len() != fit_r.dim() {
            return Err(Error::InvalidInput("child coefficient dimension mismatch".into()));
        }

        let mut cuts = state.partition.cutpoints().to_vec();
        cuts.insert(s + 1, choice.cutpoint);
        let mut segments = state.segments.clone();
        segments[s] = params_from(&cl, tau_l);
        segments.insert(s + 1, params_from(&cr, tau_r));
        let split = ModelState {
            partition: Partition::new(cuts)?,
            segments,
        };
        let ratio = self.birth_log_ratio(&SplitMerge {
            merged: state,
            split: &split,
            parent: s,
            parent_data: &parent_data,
            child_data: [&data_l, &data_r],
            log_q_parent: fit_parent.log_density(&coeffs_of(parent)),
            log_q_children: fit_l.log_density(&cl) + fit_r.log_density(&cr),
        })?;
        Ok((split, ratio))
    }

    /// Death with a fixed cutpoint and merged coefficients.
    pub fn death_with(
        &self,
        state: &ModelState,
        choice: DeathChoice,
        merged_coeffs: Option<Vec<f64>>,
        rng: &mut impl Rng,
    ) -> Result<(ModelState, f64)> {
        let c = choice.cutpoint_index;
        let k = state.n_segments();
        if c == 0 || c >= k {
            return Err(Error::InvalidInput(format!("no interior cutpoint {c}")));
        }
        let (left, right) = (&state.segments[c - 1], &state.segments[c]);
        let (tau2, _) = merge_tau2(left.tau2, right.tau2);
        let seg_l = state.partition.segment(c - 1);
        let seg_r = state.partition.segment(c);
        let merged_range = seg_l.start..seg_r.end;
        let data_m = self.segment_data(merged_range)?;
        let data_l = self.segment_data(seg_l)?;
        let data_r = self.segment_data(seg_r)?;
        let fit_m = self.mode_fit(&data_m, tau2)?;
        let fit_l = self.mode_fit(&data_l, left.tau2)?;
        let fit_r = self.mode_fit(&data_r, right.tau2)?;
        let cm = match merged_coeffs {
            Some(v) => v,
            None => fit_m.sample(rng).as_slice().to_vec(),
        };
        if cm.len() != fit_m.dim() {
            return Err(Error::InvalidInput("merged coefficient dimension mismatch".into()));
        }
        let mut cuts = state.partition.cutpoints().to_vec();
        cuts.remove(c);
        let mut segments = state.segments.clone();
        segments.remove(c);
        segments[c - 1] = params_from(&cm, tau2);
        let merged = ModelState {
            partition: Partition::new(cuts)?,
            segments,
        };
        let forward = self.birth_log_ratio(&SplitMerge {
            merged: &merged,
            split: state,
            parent: c - 1,
            parent_data: &data_m,
            child_data: [&data_l, &data_r],
            log_q_parent: fit_m.log_density(&cm),
            log_q_children: fit_l.log_density(&coeffs_of(left))
                + fit_r.log_density(&coeffs_of(right)),
        })?;
        Ok((merged, -forward))
    }

    pub fn propose_birth<R: Rng>(
        &self,
        state: &ModelState,
        rng: &mut R,
    ) -> Result<(Option<ModelState>, MoveOutcome)> {
        let candidates = self.splittable_segments(state);
        if candidates.is_empty() {
            return Ok((None, MoveOutcome::skipped()));
        }
        let s = candidates[rng.random_range(0..candidates.len())];
        let seg = state.partition.segment(s);
        let t_min = self.pcfg.t_min;
        let cutpoint = rng.random_range(seg.start + t_min..=seg.end - t_min);
        let u = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let choice = BirthChoice {
            segment: s,
            cutpoint,
            u,
        };
        match self.birth_with(state, choice, None, rng) {
            Ok((next, ratio)) => Ok((
                Some(next),
                MoveOutcome {
                    proposed: true,
                    accepted: false,
                    log_ratio: ratio,
                },
            )),
            Err(Error::Numerical(msg)) => {
                log::debug!("birth skipped: {msg}");
                Ok((None, MoveOutcome::skipped()))
            }
            Err(e) => Err(e),
        }
    }

    pub fn propose_death<R: Rng>(
        &self,
        state: &ModelState,
        rng: &mut R,
    ) -> Result<(Option<ModelState>, MoveOutcome)> {
        let k = state.n_segments();
        if k < 2 {
            return Ok((None, MoveOutcome::skipped()));
        }
        let choice = DeathChoice {
            cutpoint_index: rng.random_range(1..k),
        };
        match self.death_with(state, choice, None, rng) {
            Ok((next, ratio)) => Ok((
                Some(next),
                MoveOutcome {
                    proposed: true,
                    accepted: false,
                    log_ratio: ratio,
                },
            )),
            Err(Error::Numerical(msg)) => {
                log::debug!("death skipped: {msg}");
                Ok((None, MoveOutcome::skipped()))
            }
            Err(e) => Err(e),
        }
    }

    /// Valid positions for cutpoint `c` with its neighbours held fixed.
    pub fn relocate_range(&self, state: &ModelState, c: usize) -> LocationRange {
        let cuts = state.partition.cutpoints();
        LocationRange {
            lo: cuts[c - 1] + self.pcfg.t_min,
            hi: cuts[c + 1] - self.pcfg.t_min,
        }
    }

    fn local_range(&self, range: LocationRange, at: usize) -> LocationRange {
        let w = self.cfg.relocate_window;
        LocationRange {
            lo: range.lo.max(at.saturating_sub(w)),
            hi: range.hi.min(at + w),
        }
    }

    /// `q(to | from)` for the mixture of local and global uniform proposals.
    pub fn relocate_log_q(&self, range: LocationRange, from: usize, to: usize) -> f64 {
        let p = self.cfg.relocate_local_prob;
        let local = self.local_range(range, from);
        let mut q = (1.0 - p) / range.count() as f64;
        if local.contains(to) {
            q += p / local.count() as f64;
        }
        q.ln()
    }

    /// Relocation with fixed position and new coefficients for the two
    /// affected segments.
    pub fn relocate_with(
        &self,
        state: &ModelState,
        choice: RelocateChoice,
        new_coeffs: Option<[Vec<f64>; 2]>,
        rng: &mut impl Rng,
    ) -> Result<(ModelState, f64)> {
        let c = choice.cutpoint_index;
        let k = state.n_segments();
        if c == 0 || c >= k {
            return Err(Error::InvalidInput(format!("no interior cutpoint {c}")));
        }
        let range = self.relocate_range(state, c);
        if !range.contains(choice.position) {
            return Err(Error::InvalidInput("relocation violates t_min".into()));
        }
        let cuts = state.partition.cutpoints();
        let old_pos = cuts[c];
        let (left, right) = (&state.segments[c - 1], &state.segments[c]);
        let old_l = self.segment_data(cuts[c - 1]..old_pos)?;
        let old_r = self.segment_data(old_pos..cuts[c + 1])?;
        let new_l = self.segment_data(cuts[c - 1]..choice.position)?;
        let new_r = self.segment_data(choice.position..cuts[c + 1])?;
        let fit_old_l = self.mode_fit(&old_l, left.tau2)?;
        let fit_old_r = self.mode_fit(&old_r, right.tau2)?;
        let fit_new_l = self.mode_fit(&new_l, left.tau2)?;
        let fit_new_r = self.mode_fit(&new_r, right.tau2)?;
        let [cl, cr] = match new_coeffs {
            Some(v) => v,
            None => [
                fit_new_l.sample(rng).as_slice().to_vec(),
                fit_new_r.sample(rng).as_slice().to_vec(),
            ],
        };
        if cl.len() != fit_new_l.dim() || cr.len() != fit_new_r.dim() {
            return Err(Error::InvalidInput("relocated coefficient dimension mismatch".into()));
        }
        let mut new_cuts = cuts.to_vec();
        new_cuts[c] = choice.position;
        let mut segments = state.segments.clone();
        segments[c - 1] = params_from(&cl, left.tau2);
        segments[c] = params_from(&cr, right.tau2);
        let next = ModelState {
            partition: Partition::new(new_cuts)?,
            segments,
        };
        let target = self.seg_log_target(&new_l, &next.segments[c - 1])
            + self.seg_log_target(&new_r, &next.segments[c])
            - self.seg_log_target(&old_l, left)
            - self.seg_log_target(&old_r, right);
        let partition =
            self.log_prior_partition(&next.partition)? - self.log_prior_partition(&state.partition)?;
        let position = self.relocate_log_q(range, choice.position, old_pos)
            - self.relocate_log_q(range, old_pos, choice.position);
        let coeffs = fit_old_l.log_density(&coeffs_of(left)) + fit_old_r.log_density(&coeffs_of(right))
            - fit_new_l.log_density(&cl)
            - fit_new_r.log_density(&cr);
        Ok((next, target + partition + position + coeffs))
    }

    pub fn propose_relocate<R: Rng>(
        &self,
        state: &ModelState,
        rng: &mut R,
    ) -> Result<(Option<ModelState>, MoveOutcome)> {
        let k = state.n_segments();
        if k < 2 {
            return Ok((None, MoveOutcome::skipped()));
        }
        let c = rng.random_range(1..k);
        let range = self.relocate_range(state, c);
        let old = state.partition.cutpoints()[c];
        let position = if rng.random::<f64>() < self.cfg.relocate_local_prob {
            let local = self.local_range(range, old);
            rng.random_range(local.lo..=local.hi)
        } else {
            rng.random_range(range.lo..=range.hi)
        };
        let choice = RelocateChoice {
            cutpoint_index: c,
            position,
        };
        match self.relocate_with(state, choice, None, rng) {
            Ok((next, ratio)) => Ok((
                Some(next),
                MoveOutcome {
                    proposed: true,
                    accepted: false,
                    log_ratio: ratio,
                },
            )),
            Err(Error::Numerical(msg)) => {
                log::debug!("relocate skipped: {msg}");
                Ok((None, MoveOutcome::skipped()))
            }
            Err(e) => Err(e),
        }
    }

    /// Log MH ratio for replacing segment `s`'s coefficients by `candidate`
    /// under the independence proposal `fit` (or a symmetric random walk when
    /// `fit` is `None`).
    pub fn within_log_ratio(
        &self,
        state: &ModelState,
        s: usize,
        candidate: &[f64],
        fit: Option<&ModeFit>,
    ) -> Result<f64> {
        let data = self.segment_data(state.partition.segment(s))?;
        let current = &state.segments[s];
        let proposed = params_from(candidate, current.tau2);
        let mut r = self.seg_log_target(&data, &proposed) - self.seg_log_target(&data, current);
        if let Some(fit) = fit {
            r += fit.log_density(&coeffs_of(current)) - fit.log_density(candidate);
        }
        Ok(r)
    }

    /// Refresh every segment's coefficients (independence MH at the
    /// conditional mode) and smoothing variance (Gibbs), then attempt one
    /// cutpoint relocation.
    pub fn update_within<R: Rng>(
        &self,
        state: &mut ModelState,
        rng: &mut R,
        stats: &mut MoveStats,
    ) -> Result<MoveOutcome> {
        let mut any_accept = false;
        for s in 0..state.n_segments() {
            let data = self.segment_data(state.partition.segment(s))?;
            let tau2 = state.segments[s].tau2;
            let current = coeffs_of(&state.segments[s]);
            let fit = match self.mode_fit(&data, tau2) {
                Ok(f) if f.converged => Some(f),
                _ => None,
            };
            let candidate: Vec<f64> = match &fit {
                Some(f) => f.sample(rng).as_slice().to_vec(),
                None => {
                    stats.coeff_fallbacks += 1;
                    current
                        .iter()
                        .map(|v| v + self.cfg.rw_step * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                }
            };
            let log_r = self.within_log_ratio(state, s, &candidate, fit.as_ref())?;
            stats.coeff_proposed += 1;
            if rng.random::<f64>().ln() < log_r {
                state.segments[s] = params_from(&candidate, tau2);
                stats.coeff_accepted += 1;
                any_accept = true;
            }
            // tau2 | beta ~ InvGamma(a + J/2, b + beta'beta/2)
            let p = &state.segments[s];
            state.segments[s].tau2 = self.draw_tau2(p.beta.len(), p.beta_sq(), rng)?;
        }
        if state.n_segments() > 1 {
            let (candidate, outcome) = self.propose_relocate(state, rng)?;
            let outcome = self.accept(candidate, outcome, state, rng);
            stats.proposed[MoveKind::Relocate as usize] += usize::from(outcome.proposed);
            stats.accepted[MoveKind::Relocate as usize] += usize::from(outcome.accepted);
        }
        Ok(MoveOutcome {
            proposed: true,
            accepted: any_accept,
            log_ratio: 0.0,
        })
    }

    pub fn draw_tau2<R: Rng>(&self, n_basis: usize, beta_sq: f64, rng: &mut R) -> Result<f64> {
        let shape = self.cfg.prior.tau_shape + n_basis as f64 / 2.0;
        let rate = self.cfg.prior.tau_scale + beta_sq / 2.0;
        let gamma = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Numerical(format!("tau2 Gibbs draw: {e}")))?;
        let precision: f64 = gamma.sample(rng);
        Ok(1.0 / precision.max(f64::MIN_POSITIVE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split_keeps_tau2() {
        let tau2 = 0.7;
        let (a, b) = split_tau2(tau2, 0.5);
        assert!((a - tau2).abs() < 1e-15 && (b - tau2).abs() < 1e-15);
        assert!((split_log_jacobian(tau2, 0.5) - (8.0 * tau2).ln()).abs() < 1e-12);
    }

    #[test]
    fn merge_inverts_split() {
        let (m, u) = merge_tau2(2.5, 2.5);
        assert!((m - 2.5).abs() < 1e-15 && (u - 0.5).abs() < 1e-15);
        for (tau2, u) in [(0.3, 0.1), (4.0, 0.8), (1.0, 0.999)] {
            let (a, b) = split_tau2(tau2, u);
            let (t2, u2) = merge_tau2(a, b);
            assert!((t2 / tau2 - 1.0).abs() < 1e-12);
            assert!((u2 - u).abs() < 1e-12);
        }
    }
}
