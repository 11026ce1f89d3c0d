use proptest::prelude::*;
use tvspec::metrics::{mse, skl};
use tvspec::spectral::{default_freq_grid, TvSpectrum};

fn spec(t: usize, nf: usize, power: Vec<f64>) -> TvSpectrum {
    TvSpectrum::new((1..=t).collect(), default_freq_grid(nf), power).unwrap()
}

#[test]
fn closed_form_values() {
    let g = 7 * 5;
    let one = TvSpectrum::flat(7, default_freq_grid(5), 1.0).unwrap();
    let e = TvSpectrum::flat(7, default_freq_grid(5), std::f64::consts::E).unwrap();
    let two = TvSpectrum::flat(7, default_freq_grid(5), 2.0).unwrap();
    // per cell: 1 * ln(1/e) + e * ln(e/1) = e - 1
    let expect = g as f64 * (std::f64::consts::E - 1.0);
    assert!((skl(&one, &e).unwrap() - expect).abs() < 1e-12 * expect);
    assert!((mse(&one, &two).unwrap() - g as f64).abs() < 1e-12);
    assert_eq!(skl(&one, &one).unwrap(), 0.0);
    assert_eq!(mse(&one, &one).unwrap(), 0.0);
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = TvSpectrum::flat(4, default_freq_grid(5), 1.0).unwrap();
    let b = TvSpectrum::flat(4, default_freq_grid(6), 1.0).unwrap();
    let c = TvSpectrum::flat(5, default_freq_grid(5), 1.0).unwrap();
    assert!(skl(&a, &b).is_err());
    assert!(mse(&a, &c).is_err());
    assert!(TvSpectrum::new(vec![1], default_freq_grid(2), vec![1.0, 0.0]).is_err());
}

fn grids() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..6, 2usize..6).prop_flat_map(|(t, nf)| {
        let n = t * nf;
        (
            Just(t),
            Just(nf),
            proptest::collection::vec(0.01f64..50.0, n),
            proptest::collection::vec(0.01f64..50.0, n),
        )
    })
}

proptest! {
    #[test]
    fn skl_is_symmetric_and_nonnegative((t, nf, a, b) in grids()) {
        let (fa, fb) = (spec(t, nf, a), spec(t, nf, b));
        let ab = skl(&fa, &fb).unwrap();
        let ba = skl(&fb, &fa).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }

    #[test]
    fn perturbation_makes_both_metrics_positive((t, nf, a, _b) in grids(), cell in 0usize..1000, factor in 1.001f64..3.0) {
        let mut p = a.clone();
        let i = cell % p.len();
        p[i] *= factor;
        let (fa, fp) = (spec(t, nf, a), spec(t, nf, p));
        prop_assert!(skl(&fa, &fp).unwrap() > 0.0);
        prop_assert!(mse(&fa, &fp).unwrap() > 0.0);
    }

    #[test]
    fn mse_scales_quadratically((t, nf, a, b) in grids(), c in 0.1f64..10.0) {
        let base = mse(&spec(t, nf, a.clone()), &spec(t, nf, b.clone())).unwrap();
        let scale = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let scaled = mse(&spec(t, nf, scale(&a)), &spec(t, nf, scale(&b))).unwrap();
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * scaled.max(1.0));
    }

    #[test]
    fn skl_is_scale_free((t, nf, a, b) in grids(), c in 0.1f64..10.0) {
        // (cf - cg) ln(cf / cg) = c (f - g) ln(f / g)
        let base = skl(&spec(t, nf, a.clone()), &spec(t, nf, b.clone())).unwrap();
        let scale = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let scaled = skl(&spec(t, nf, scale(&a)), &spec(t, nf, scale(&b))).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * scaled.max(1.0));
    }
}
