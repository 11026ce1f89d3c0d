//! Segmentations of `1..=T` and the prior over them.
//!
//! Segment `s` (1-based) covers times `xi_{s-1}+1 ..= xi_s`. The prior is
//! `Pr(K) = 1/S` times a sequence of discrete uniforms: given
//! `xi_{s-1}`, the cutpoint `xi_s` is uniform over the positions that still
//! leave `t_min` observations for every remaining segment.

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionConfig {
    pub t_min: usize,
    pub max_segments: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            t_min: 50,
            max_segments: 30,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_min < 2 {
            return invalid(format!("t_min must be >= 2, got {}", self.t_min));
        }
        if self.max_segments < 1 {
            return invalid("maximum segment count must be >= 1");
        }
        Ok(())
    }

    /// Largest segment count that can actually be realized on `total_len`
    /// observations.
    pub fn feasible_max_segments(&self, total_len: usize) -> usize {
        self.max_segments.min(total_len / self.t_min)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    cutpoints: Vec<usize>,
}

impl Partition {
    /// `cutpoints` must start at 0, end at `T` and be strictly increasing.
    pub fn new(cutpoints: Vec<usize>) -> Result<Self> {
        if cutpoints.len() < 2 || cutpoints[0] != 0 {
            return invalid("cutpoints must start at 0 and contain at least one segment");
        }
        if cutpoints.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("cutpoints must be strictly increasing");
        }
        Ok(Self { cutpoints })
    }

    pub fn single(total_len: usize) -> Result<Self> {
        Self::new(vec![0, total_len])
    }

    pub fn total_len(&self) -> usize {
        *self.cutpoints.last().expect("nonempty cutpoints")
    }

    pub fn n_segments(&self) -> usize {
        self.cutpoints.len() - 1
    }

    /// Full cutpoint vector `(xi_0 = 0, ..., xi_K = T)`.
    pub fn cutpoints(&self) -> &[usize] {
        &self.cutpoints
    }

    /// Interior cutpoints `xi_1..xi_{K-1}`.
    pub fn interior(&self) -> &[usize] {
        &self.cutpoints[1..self.cutpoints.len() - 1]
    }

    /// Zero-based half-open index range of segment `s` (0-based).
    pub fn segment(&self, s: usize) -> std::ops::Range<usize> {
        self.cutpoints[s]..self.cutpoints[s + 1]
    }

    pub fn segment_len(&self, s: usize) -> usize {
        self.cutpoints[s + 1] - self.cutpoints[s]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.cutpoints.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// 0-based segment index containing zero-based time index `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        self.cutpoints.partition_point(|&c| c <= i) - 1
    }

    pub fn check(&self, cfg: &PartitionConfig) -> Result<()> {
        let k = self.n_segments();
        if k > cfg.max_segments {
            return invalid(format!(
                "partition has {k} segments, maximum is {}",
                cfg.max_segments
            ));
        }
        if let Some(s) = self.lengths().iter().position(|&l| l < cfg.t_min) {
            return invalid(format!(
                "segment {} has length {} < t_min = {}",
                s + 1,
                self.segment_len(s),
                cfg.t_min
            ));
        }
        Ok(())
    }

    pub(crate) fn with_cutpoints(cutpoints: Vec<usize>) -> Self {
        debug_assert!(cutpoints.windows(2).all(|w| w[1] > w[0]));
        Self { cutpoints }
    }
}

/// Inclusive range of valid positions for a cutpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocationRange {
    pub lo: usize,
    pub hi: usize,
}

impl LocationRange {
    pub fn count(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.lo..=self.hi).contains(&t)
    }
}

/// Valid positions for cutpoint `s` of `k` segments given `xi_{s-1}`:
/// `[xi_{s-1} + t_min, T - (k - s) t_min]`, of size
/// `T - xi_{s-1} - (k - s + 1) t_min + 1`.
pub fn available_locations(
    total_len: usize,
    xi_prev: usize,
    s: usize,
    k: usize,
    t_min: usize,
) -> Result<LocationRange> {
    if s == 0 || s >= k {
        return invalid(format!("cutpoint index {s} out of range for {k} segments"));
    }
    let lo = xi_prev + t_min;
    let reserved = (k - s) * t_min;
    if total_len < reserved || lo > total_len - reserved {
        return Err(Error::EmptyDomain(format!(
            "no valid location for cutpoint {s} of {k} (T = {total_len}, previous = {xi_prev}, t_min = {t_min})"
        )));
    }
    Ok(LocationRange {
        lo,
        hi: total_len - reserved,
    })
}

/// `log Pr(K) + log Pr(xi | K) = -log S - sum_{s=1}^{K-1} log p_{s,K}`.
pub fn log_prior_partition(p: &Partition, cfg: &PartitionConfig) -> Result<f64> {
    cfg.validate()?;
    p.check(cfg)?;
    let k = p.n_segments();
    let t = p.total_len();
    let mut lp = -(cfg.max_segments as f64).ln();
    for s in 1..k {
        let range = available_locations(t, p.cutpoints[s - 1], s, k, cfg.t_min)?;
        lp -= (range.count() as f64).ln();
    }
    Ok(lp)
}

/// Default cap on the number of enumerated partitions.
pub const ENUMERATION_BOUND: usize = 1_000_000;

/// Every valid partition of `1..=total_len`, in order of `K` then
/// lexicographic cutpoints.
pub fn enumerate_partitions(
    total_len: usize,
    cfg: &PartitionConfig,
    bound: usize,
) -> Result<Vec<Partition>> {
    cfg.validate()?;
    if total_len < cfg.t_min {
        return invalid(format!(
            "series length {total_len} is shorter than t_min = {}",
            cfg.t_min
        ));
    }
    let mut out = Vec::new();
    let k_max = cfg.feasible_max_segments(total_len);
    for k in 1..=k_max {
        let mut cuts = vec![0usize];
        extend(total_len, k, cfg.t_min, &mut cuts, &mut out, bound)?;
    }
    Ok(out)
}

fn extend(
    total_len: usize,
    k: usize,
    t_min: usize,
    cuts: &mut Vec<usize>,
    out: &mut Vec<Partition>,
    bound: usize,
) -> Result<()> {
    let s = cuts.len();
    if s == k {
        if out.len() >= bound {
            return Err(Error::Resource(format!(
                "more than {bound} partitions for T = {total_len}"
            )));
        }
        let mut c = cuts.clone();
        c.push(total_len);
        out.push(Partition::with_cutpoints(c));
        return Ok(());
    }
    let range = available_locations(total_len, cuts[s - 1], s, k, t_min)?;
    for pos in range.lo..=range.hi {
        cuts.push(pos);
        extend(total_len, k, t_min, cuts, out, bound)?;
        cuts.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn available_location_examples() {
        let r = available_locations(200, 0, 1, 2, 50).unwrap();
        assert_eq!(r.count(), 101);
        assert_eq!((r.lo, r.hi), (50, 150));
        assert_eq!(available_locations(100, 0, 1, 2, 50).unwrap().count(), 1);
        assert!(matches!(
            available_locations(99, 0, 1, 2, 50),
            Err(Error::EmptyDomain(_))
        ));
    }

    #[test]
    fn log_prior_examples() {
        let cfg = PartitionConfig::default();
        let p = Partition::single(200).unwrap();
        assert!((log_prior_partition(&p, &cfg).unwrap() - (1.0f64 / 30.0).ln()).abs() < 1e-14);
        let p = Partition::new(vec![0, 100, 200]).unwrap();
        let expected = -(30f64).ln() - (101f64).ln();
        assert!((log_prior_partition(&p, &cfg).unwrap() - expected).abs() < 1e-14);
        let bad = Partition::new(vec![0, 30, 200]).unwrap();
        assert!(log_prior_partition(&bad, &cfg).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let cfg = PartitionConfig::default();
        let all = enumerate_partitions(100, &cfg, ENUMERATION_BOUND).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1].cutpoints(), &[0, 50, 100]);
        assert_eq!(enumerate_partitions(150, &cfg, ENUMERATION_BOUND).unwrap().len(), 53);
        assert!(enumerate_partitions(49, &cfg, ENUMERATION_BOUND).is_err());
        assert!(matches!(
            enumerate_partitions(150, &cfg, 10),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn prior_normalizes() {
        for (t, s) in [(100usize, 2usize), (150, 3), (160, 3), (230, 4)] {
            let cfg = PartitionConfig {
                t_min: 50,
                max_segments: s,
            };
            let total: f64 = enumerate_partitions(t, &cfg, ENUMERATION_BOUND)
                .unwrap()
                .iter()
                .map(|p| log_prior_partition(p, &cfg).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "T={t}: {total}");
        }
    }

    #[test]
    fn first_cutpoint_uniform_given_two_segments() {
        let cfg = PartitionConfig {
            t_min: 50,
            max_segments: 5,
        };
        let lps: Vec<f64> = enumerate_partitions(260, &cfg, ENUMERATION_BOUND)
            .unwrap()
            .iter()
            .filter(|p| p.n_segments() == 2)
            .map(|p| log_prior_partition(p, &cfg).unwrap())
            .collect();
        assert_eq!(lps.len(), 161);
        assert!(lps.iter().all(|v| (v - lps[0]).abs() < 1e-15));
    }

    #[test]
    fn segment_lookup() {
        let p = Partition::new(vec![0, 3, 7, 10]).unwrap();
        assert_eq!(p.segment_of(0), 0);
        assert_eq!(p.segment_of(2), 0);
        assert_eq!(p.segment_of(3), 1);
        assert_eq!(p.segment_of(9), 2);
        assert_eq!(p.lengths(), vec![3, 4, 3]);
        assert_eq!(p.interior(), &[3, 7]);
    }

    proptest! {
        #[test]
        fn location_count_matches_brute_force(
            t in 2usize..400, xi in 0usize..300, k in 2usize..6, s_off in 0usize..5, t_min in 2usize..60,
        ) {
            let s = 1 + s_off % (k - 1);
            let brute = (0..=t)
                .filter(|&pos| pos >= xi + t_min && t >= pos && t - pos >= (k - s) * t_min)
                .count();
            match available_locations(t, xi, s, k, t_min) {
                Ok(r) => {
                    prop_assert_eq!(r.count(), brute);
                    prop_assert_eq!(r.count() as i64, t as i64 - xi as i64 - ((k - s + 1) * t_min) as i64 + 1);
                }
                Err(_) => prop_assert_eq!(brute, 0),
            }
        }
    }
}
