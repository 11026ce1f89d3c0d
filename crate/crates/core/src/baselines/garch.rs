//! Gaussian quasi-maximum-likelihood GARCH(1,1).

use super::simplex::{minimize, SimplexOptions};
use crate::error::{invalid, Result};
use crate::generators::GarchParams;
use crate::spectral::TvSpectrum;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Persistence is kept strictly below 1 by this margin.
pub(crate) const PERSISTENCE_CAP: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GarchFit {
    pub params: GarchParams,
    pub loglik: f64,
    pub converged: bool,
    pub evals: usize,
}

pub(crate) fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Gaussian log-likelihood with the recursion started at `sigma2_1`.
pub(crate) fn loglik_from(y: &[f64], p: &GarchParams, sigma2_1: f64) -> f64 {
    let mut sigma2 = sigma2_1;
    let mut ll = 0.0;
    for (t, &v) in y.iter().enumerate() {
        if t > 0 {
            let eta = y[t - 1] - p.mu;
            sigma2 = p.alpha0 + p.alpha1 * eta * eta + p.beta1 * sigma2;
        }
        let eta = v - p.mu;
        ll -= 0.5 * (LN_2PI + sigma2.ln() + eta * eta / sigma2);
    }
    ll
}

/// Log-likelihood with the first conditional variance set to the sample
/// variance of `y`.
pub fn garch_loglik(y: &[f64], params: &GarchParams) -> Result<f64> {
    params.validate()?;
    if y.len() < 2 {
        return invalid("GARCH likelihood needs at least two observations");
    }
    Ok(loglik_from(y, params, sample_variance(y)))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unconstrained coordinates `(mu, ln alpha0, logit persistence, logit share)`
/// where persistence is `alpha1 + beta1` and share is `alpha1 / persistence`.
pub(crate) fn to_free(p: &GarchParams) -> [f64; 4] {
    let pers = (p.alpha1 + p.beta1).clamp(1e-6, PERSISTENCE_CAP - 1e-6);
    let share = if p.alpha1 + p.beta1 > 0.0 {
        (p.alpha1 / (p.alpha1 + p.beta1)).clamp(1e-6, 1.0 - 1e-6)
    } else {
        0.5
    };
    [p.mu, p.alpha0.ln(), logit(pers / PERSISTENCE_CAP), logit(share)]
}

pub(crate) fn from_free(x: &[f64]) -> GarchParams {
    let pers = PERSISTENCE_CAP * logistic(x[2]);
    let share = logistic(x[3]);
    GarchParams {
        mu: x[0],
        alpha0: x[1].exp(),
        alpha1: pers * share,
        beta1: pers * (1.0 - share),
    }
}

/// Quasi-ML fit by Nelder-Mead over reparameterized coordinates, started
/// from a few moment-based guesses.
pub fn fit_garch(y: &[f64]) -> Result<GarchFit> {
    fit_garch_with(y, SimplexOptions::default())
}

pub fn fit_garch_with(y: &[f64], opts: SimplexOptions) -> Result<GarchFit> {
    if y.len() < 100 {
        return invalid(format!("GARCH fit needs T >= 100, got {}", y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return invalid("series contains non-finite values");
    }
    let var = sample_variance(y);
    if var.is_nan() || var <= 0.0 {
        return invalid("series has zero variance");
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut best: Option<GarchFit> = None;
    for (pers, share) in [(0.2, 0.5), (0.9, 0.1), (0.5, 0.3)] {
        let start = GarchParams {
            mu: mean,
            alpha0: var * (1.0 - pers),
            alpha1: pers * share,
            beta1: pers * (1.0 - share),
        };
        let r = minimize(
            |x| -loglik_from(y, &from_free(x), var),
            &to_free(&start),
            opts,
        );
        let fit = GarchFit {
            params: from_free(&r.x),
            loglik: -r.value,
            converged: r.converged,
            evals: r.evals,
        };
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one start");
    if !fit.converged {
        log::warn!("GARCH fit hit the evaluation limit; returning best parameters found");
    }
    Ok(fit)
}

/// Flat spectrum at the fitted unconditional variance.
pub fn garch_implied_tvspectrum(params: &GarchParams, t_len: usize, freq_grid: &[f64]) -> Result<TvSpectrum> {
    params.validate()?;
    TvSpectrum::flat(t_len, freq_grid.to_vec(), params.sigma2_uc())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparameterization_round_trips() {
        for p in [
            GarchParams::reference(),
            GarchParams::reference_high(),
            GarchParams::new(0.3, 0.05, 0.08, 0.9).unwrap(),
        ] {
            let q = from_free(&to_free(&p));
            assert!((q.alpha0 - p.alpha0).abs() < 1e-12);
            assert!((q.alpha1 - p.alpha1).abs() < 1e-9);
            assert!((q.beta1 - p.beta1).abs() < 1e-9);
            assert_eq!(q.mu, p.mu);
        }
        // Every point of the free space maps to a stationary model.
        for x in [[0.0, 40.0, 50.0, -50.0], [1.0, -40.0, -50.0, 50.0]] {
            from_free(&x).validate().unwrap();
        }
    }

    #[test]
    fn implied_spectrum_levels() {
        let grid = crate::spectral::default_freq_grid(101);
        let s = garch_implied_tvspectrum(&GarchParams::reference(), 10, &grid).unwrap();
        assert!(s.power().iter().all(|&v| (v - 1.25).abs() < 1e-12));
        let iid = GarchParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let coarse = garch_implied_tvspectrum(&iid, 5, &[0.0, 0.5]).unwrap();
        let fine = garch_implied_tvspectrum(&iid, 5, &grid).unwrap();
        assert!(coarse.power().iter().chain(fine.power()).all(|&v| v == 1.0));
    }

    #[test]
    fn loglik_matches_direct_density_sum() {
        let y = [0.5, -1.0, 2.0, 0.1];
        let p = GarchParams::new(0.1, 0.5, 0.2, 0.3).unwrap();
        let var = sample_variance(&y);
        let mut s2 = var;
        let mut ll = 0.0;
        for t in 0..4 {
            if t > 0 {
                s2 = 0.5 + 0.2 * (y[t - 1] - 0.1f64).powi(2) + 0.3 * s2;
            }
            ll += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (y[t] - 0.1f64).powi(2) / (2.0 * s2);
        }
        assert!((garch_loglik(&y, &p).unwrap() - ll).abs() < 1e-12);
    }
}
