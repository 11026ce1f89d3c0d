use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tvspec::basis::SegmentParams;
use tvspec::exec::rng_from_seed;
use tvspec::partition::{enumerate_partitions, log_prior_partition, Partition, PartitionConfig, ENUMERATION_BOUND};
use tvspec::sampler::{
    posterior_mean_spectrum, posterior_summary, read_draws, run_chain, write_draws, BirthChoice,
    DeathChoice, ModelState, MoveKind, RelocateChoice, Sampler, SamplerConfig,
};
use tvspec::spectral::default_freq_grid;

fn white(n: usize, seed: u64, sd: f64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let e = white(n + 200, seed, 1.0);
    let mut y = vec![0.0; n + 200];
    for t in 1..y.len() {
        y[t] = phi * y[t - 1] + e[t];
    }
    y.split_off(200)
}

fn random_coeffs(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_state(sampler: &Sampler<'_>, cuts: Vec<usize>, seed: u64) -> ModelState {
    let mut rng = rng_from_seed(seed);
    let partition = Partition::new(cuts).unwrap();
    let segments = (0..partition.n_segments())
        .map(|s| {
            let j = sampler.basis(partition.segment_len(s)).unwrap().n_basis();
            let c = random_coeffs(j + 1, &mut rng);
            SegmentParams::new(c[0], c[1..].to_vec(), 0.2 + rng.random::<f64>()).unwrap()
        })
        .collect();
    ModelState {
        partition,
        segments,
    }
}

fn coeffs(p: &SegmentParams) -> Vec<f64> {
    let mut v = vec![p.alpha0];
    v.extend_from_slice(&p.beta);
    v
}

fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn birth_death_reversibility() {
    let y = white(300, 11, 1.5);
    let cfg = SamplerConfig::default();
    let pcfg = PartitionConfig {
        t_min: 50,
        max_segments: 5,
    };
    let sampler = Sampler::new(&y, &cfg, &pcfg).unwrap();
    let mut rng = rng_from_seed(3);
    for (cuts, segment, cut, u) in [
        (vec![0, 300], 0, 140, 0.3),
        (vec![0, 120, 300], 1, 200, 0.77),
        (vec![0, 100, 200, 300], 0, 50, 0.5),
    ] {
        let state = random_state(&sampler, cuts, 17);
        let choice = BirthChoice { segment, cutpoint: cut, u };
        let (split, forward) = sampler.birth_with(&state, choice, None, &mut rng).unwrap();
        sampler.check_state(&split).unwrap();
        let (merged, backward) = sampler
            .death_with(
                &split,
                DeathChoice {
                    cutpoint_index: segment + 1,
                },
                Some(coeffs(&state.segments[segment])),
                &mut rng,
            )
            .unwrap();
        assert_eq!(merged.partition, state.partition);
        assert!((merged.segments[segment].tau2 - state.segments[segment].tau2).abs() < 1e-12);
        assert!(forward.is_finite());
        assert!(
            (forward + backward).abs() < 1e-8,
            "forward {forward} backward {backward}"
        );
    }
}

#[test]
fn relocate_reversibility() {
    let y = white(400, 5, 1.0);
    let cfg = SamplerConfig::default();
    let pcfg = PartitionConfig::default();
    let sampler = Sampler::new(&y, &cfg, &pcfg).unwrap();
    let mut rng = rng_from_seed(9);
    let state = random_state(&sampler, vec![0, 150, 260, 400], 2);
    for (c, pos) in [(1, 160), (1, 60), (2, 330), (2, 250)] {
        let choice = RelocateChoice {
            cutpoint_index: c,
            position: pos,
        };
        let (moved, forward) = sampler.relocate_with(&state, choice, None, &mut rng).unwrap();
        sampler.check_state(&moved).unwrap();
        let back = RelocateChoice {
            cutpoint_index: c,
            position: state.partition.cutpoints()[c],
        };
        let original = [coeffs(&state.segments[c - 1]), coeffs(&state.segments[c])];
        let (restored, backward) = sampler.relocate_with(&moved, back, Some(original), &mut rng).unwrap();
        assert_eq!(restored, state);
        assert!(
            (forward + backward).abs() < 1e-8,
            "forward {forward} backward {backward}"
        );
    }
}

#[test]
fn symmetric_within_proposal_is_always_accepted() {
    let y = white(200, 1, 1.0);
    let cfg = SamplerConfig::default();
    let sampler = Sampler::new(&y, &cfg, &PartitionConfig::default()).unwrap();
    let state = random_state(&sampler, vec![0, 90, 200], 4);
    for s in 0..2 {
        let current = coeffs(&state.segments[s]);
        let r = sampler.within_log_ratio(&state, s, &current, None).unwrap();
        assert_eq!(r.min(0.0).exp(), 1.0);
    }
}

#[test]
fn tau2_gibbs_draw_matches_inverse_gamma_mean() {
    let y = white(200, 1, 1.0);
    let cfg = SamplerConfig::default();
    let sampler = Sampler::new(&y, &cfg, &PartitionConfig::default()).unwrap();
    let mut rng = rng_from_seed(8);
    let j = 30;
    let n = 100_000;
    let mean: f64 = (0..n)
        .map(|_| sampler.draw_tau2(j, 0.0, &mut rng).unwrap())
        .sum::<f64>()
        / n as f64;
    let (a, b) = (cfg.prior.tau_shape, cfg.prior.tau_scale);
    let expected = b / (a + j as f64 / 2.0 - 1.0);
    assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
}

#[test]
fn relocations_respect_min_segment_length() {
    let y = white(400, 2, 1.0);
    let cfg = SamplerConfig::default();
    let pcfg = PartitionConfig::default();
    let sampler = Sampler::new(&y, &cfg, &pcfg).unwrap();
    let mut rng = rng_from_seed(1);
    let mut state = random_state(&sampler, vec![0, 100, 150, 300, 400], 6);
    for _ in 0..300 {
        let (next, _) = sampler.propose_relocate(&state, &mut rng).unwrap();
        let next = next.unwrap();
        assert!(next.partition.lengths().iter().all(|&l| l >= pcfg.t_min));
        sampler.check_state(&next).unwrap();
        state = next;
    }
}

#[test]
fn infeasible_moves_get_no_mass() {
    let y = white(120, 2, 1.0);
    let cfg = SamplerConfig::default();
    let sampler = Sampler::new(&y, &cfg, &PartitionConfig::default()).unwrap();
    let state = sampler.initial_state().unwrap();
    let p = sampler.move_probabilities(&state);
    assert_eq!(p[MoveKind::Death as usize], 0.0);
    assert_eq!(p[MoveKind::Relocate as usize], 0.0);
    assert!((p[MoveKind::Birth as usize] - 0.25 / 0.55).abs() < 1e-12);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn prior_recovery_over_partitions() {
    let t = 300;
    let pcfg = PartitionConfig {
        t_min: 50,
        max_segments: 4,
    };
    let y = white(t, 1, 1.0);
    let thin = 10;
    let n_keep = 100_000;
    let cfg = SamplerConfig {
        n_burn: 1_000,
        n_iter: 1_000 + n_keep * thin,
        thin,
        use_likelihood: false,
        keep_states: true,
        rng_seed: 2024,
        ..SamplerConfig::default()
    };
    let draws = run_chain(&y, &cfg, &pcfg, &[0.0, 0.5]).unwrap();
    assert_eq!(draws.n_retained, n_keep);

    let parts = enumerate_partitions(t, &pcfg, ENUMERATION_BOUND).unwrap();
    let mut pk = [0.0; 5];
    // First-cutpoint marginal given K >= 2, binned in 10-point blocks.
    let nbins = t / 10;
    let mut pcut = vec![0.0; nbins];
    for p in &parts {
        let w = log_prior_partition(p, &pcfg).unwrap().exp();
        pk[p.n_segments()] += w;
        if p.n_segments() > 1 {
            pcut[p.cutpoints()[1] / 10] += w;
        }
    }
    let total: f64 = pk.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);

    let obs_k: Vec<f64> = (1..=4).map(|k| draws.k_counts[k] as f64).collect();
    let exp_k: Vec<f64> = (1..=4).map(|k| pk[k] * n_keep as f64).collect();
    let p_k = chi_square_p(&obs_k, &exp_k);
    assert!(p_k > 0.01, "K: observed {obs_k:?} expected {exp_k:?} p = {p_k}");

    let mut obs_c = vec![0.0; nbins];
    for r in &draws.states {
        if r.state.n_segments() > 1 {
            obs_c[r.state.partition.cutpoints()[1] / 10] += 1.0;
        }
    }
    let n_multi: f64 = obs_c.iter().sum();
    let mass: f64 = pcut.iter().sum();
    let (o, e): (Vec<f64>, Vec<f64>) = obs_c
        .iter()
        .zip(&pcut)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o, e / mass * n_multi))
        .unzip();
    let p_c = chi_square_p(&o, &e);
    assert!(p_c > 0.01, "cutpoint: p = {p_c}");
}

#[test]
fn identical_seeds_give_identical_chains() {
    let y = white(300, 4, 1.0);
    let cfg = SamplerConfig {
        n_iter: 300,
        n_burn: 100,
        rng_seed: 77,
        ..SamplerConfig::default()
    };
    let grid = default_freq_grid(11);
    let a = run_chain(&y, &cfg, &PartitionConfig::default(), &grid).unwrap();
    let b = run_chain(&y, &cfg, &PartitionConfig::default(), &grid).unwrap();
    assert_eq!(a.k_counts, b.k_counts);
    assert_eq!(a.spectrum_sum(), b.spectrum_sum());
    assert_eq!(a.stats, b.stats);
}

#[test]
fn stationary_ar1_prefers_one_segment() {
    let y = ar1(1024, 0.5, 31);
    let cfg = SamplerConfig {
        n_iter: 4000,
        n_burn: 1000,
        rng_seed: 5,
        keep_states: false,
        ..SamplerConfig::default()
    };
    let draws = run_chain(&y, &cfg, &PartitionConfig::default(), &default_freq_grid(101)).unwrap();
    let pk = draws.k_probabilities();
    assert_eq!(draws.k_mode(), 1, "{pk:?}");
    assert!(pk[1] > 0.5, "{pk:?}");
    let rate = draws.stats.coeff_acceptance_rate();
    assert!(rate > 0.1 && rate < 0.95, "within acceptance {rate}");
}

#[test]
fn variance_break_is_located() {
    let mut y = white(1000, 12, 1.0);
    y[500..].iter_mut().for_each(|v| *v *= 3.0);
    let cfg = SamplerConfig {
        n_iter: 4000,
        n_burn: 1000,
        rng_seed: 6,
        ..SamplerConfig::default()
    };
    let draws = run_chain(&y, &cfg, &PartitionConfig::default(), &default_freq_grid(101)).unwrap();
    assert_eq!(draws.k_mode(), 2, "{:?}", draws.k_probabilities());
    let mut cuts: Vec<usize> = draws
        .states
        .iter()
        .filter(|r| r.state.n_segments() == 2)
        .map(|r| r.state.partition.cutpoints()[1])
        .collect();
    cuts.sort_unstable();
    let median = cuts[cuts.len() / 2];
    assert!(median.abs_diff(500) <= 30, "median cutpoint {median}");
    let rate = draws.stats.coeff_acceptance_rate();
    assert!(rate > 0.1 && rate < 0.95, "within acceptance {rate}");

    let summary = posterior_summary(&draws).unwrap();
    let (lo, hi) = (summary.lower90.unwrap(), summary.upper90.unwrap());
    let mean = summary.mean.power();
    assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h));
    assert!(mean.iter().all(|m| *m > 0.0));
    // Power quadruples across the break.
    let early = summary.mean.row(100).iter().sum::<f64>();
    let late = summary.mean.row(900).iter().sum::<f64>();
    assert!(late / early > 4.0, "{early} {late}");
}

#[test]
fn white_noise_posterior_mean_is_flat_near_one() {
    let y = white(1024, 21, 1.0);
    let cfg = SamplerConfig {
        n_iter: 4000,
        n_burn: 1000,
        rng_seed: 8,
        keep_states: false,
        ..SamplerConfig::default()
    };
    let draws = run_chain(&y, &cfg, &PartitionConfig::default(), &default_freq_grid(101)).unwrap();
    let mean = posterior_mean_spectrum(&draws).unwrap();
    for (f, v) in mean.time_average().iter().enumerate() {
        assert!((0.8..=1.25).contains(v), "frequency {f}: {v}");
    }
}

#[test]
fn identical_states_give_exact_mean() {
    let y = white(200, 1, 1.0);
    let cfg = SamplerConfig::default();
    let sampler = Sampler::new(&y, &cfg, &PartitionConfig::default()).unwrap();
    let state = random_state(&sampler, vec![0, 80, 200], 3);
    let grid = default_freq_grid(21);
    let mut draws = tvspec::sampler::PosteriorDraws::new(200, grid.clone(), 4, true);
    for it in 0..5 {
        draws.push_state(&sampler, it, &state).unwrap();
    }
    let mean = posterior_mean_spectrum(&draws).unwrap();
    let single = {
        let mut d = tvspec::sampler::PosteriorDraws::new(200, grid, 4, true);
        d.push_state(&sampler, 0, &state).unwrap();
        posterior_mean_spectrum(&d).unwrap()
    };
    for (a, b) in mean.power().iter().zip(single.power()) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
    let s = posterior_summary(&draws).unwrap();
    assert!(s.variance.iter().all(|v| v.abs() < 1e-9));
    assert_eq!(s.lower90.unwrap(), s.upper90.unwrap());
}

#[test]
fn draws_round_trip_through_jsonl() {
    let y = white(200, 1, 1.0);
    let cfg = SamplerConfig {
        n_iter: 200,
        n_burn: 50,
        rng_seed: 3,
        ..SamplerConfig::default()
    };
    let draws = run_chain(&y, &cfg, &PartitionConfig::default(), &default_freq_grid(5)).unwrap();
    let mut buf = Vec::new();
    write_draws(&draws, &mut buf).unwrap();
    let (t_len, records) = read_draws(buf.as_slice()).unwrap();
    assert_eq!(t_len, 200);
    assert_eq!(records.len(), draws.states.len());
    for (r, kept) in records.iter().zip(&draws.states) {
        assert_eq!(r.to_state().unwrap(), kept.state);
    }
    assert!(read_draws("{\"schema\":\"other\",\"version\":1,\"t_len\":3}\n".as_bytes()).is_err());
}
