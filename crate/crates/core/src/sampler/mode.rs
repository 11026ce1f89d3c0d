//! Conditional posterior mode of `(alpha0, beta)` given `tau2`, and the
//! Gaussian proposal built at that mode.
//!
//! The objective is
//! `l(alpha0, beta) = whittle(g) - beta'beta / (2 tau2) - alpha0^2 / (2 alpha_var)`
//! with `g = alpha0 + X beta`. It is strictly concave, so Newton ascent with
//! step halving converges from any start.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{log_spectrum, BasisMatrix, SegmentPrior};
use crate::error::{Error, Result};
use crate::spectral::WhittleTerms;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonControl {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonControl {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Mode of the conditional posterior together with the negative Hessian
/// there. `coeffs[0]` is `alpha0`, the rest are `beta`.
#[derive(Clone, Debug)]
pub struct ModeFit {
    pub coeffs: DVector<f64>,
    pub neg_hessian: DMatrix<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    chol: Cholesky<f64, Dyn>,
}

impl ModeFit {
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// Draw from `N(mode, neg_hessian^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // neg_hessian = L L^T, so L^{-T} z has covariance neg_hessian^{-1}.
        let x = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor is nonsingular");
        &self.coeffs + x
    }

    /// Log density of `N(mode, neg_hessian^{-1})` at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let l = self.chol.l();
        let d = DVector::from_column_slice(x) - &self.coeffs;
        let v = l.transpose() * d;
        let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * self.dim() as f64 * LN_2PI + log_det_half - 0.5 * v.norm_squared()
    }
}

/// Conditional log posterior (up to a constant) and, optionally, its
/// gradient and negative Hessian.
pub(crate) struct Objective<'a> {
    pub terms: Option<&'a WhittleTerms>,
    pub basis: &'a BasisMatrix,
    pub tau2: f64,
    pub prior: &'a SegmentPrior,
}

impl Objective<'_> {
    fn precisions(&self) -> (f64, f64) {
        (1.0 / self.prior.alpha_var, 1.0 / self.tau2)
    }

    pub fn value(&self, coeffs: &[f64]) -> f64 {
        let (pa, pb) = self.precisions();
        let beta = &coeffs[1..];
        let mut v = -0.5 * pa * coeffs[0] * coeffs[0]
            - 0.5 * pb * beta.iter().map(|b| b * b).sum::<f64>();
        if let Some(terms) = self.terms {
            let g = log_spectrum(self.basis, coeffs[0], beta);
            v += terms.loglik_unchecked(&g);
        }
        v
    }

    /// Gradient and negative Hessian.
    pub fn derivatives(&self, coeffs: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = coeffs.len();
        let (pa, pb) = self.precisions();
        let mut grad = DVector::from_fn(d, |i, _| if i == 0 { -pa } else { -pb } * coeffs[i]);
        let mut neg_h = DMatrix::<f64>::zeros(d, d);
        neg_h[(0, 0)] = pa;
        for i in 1..d {
            neg_h[(i, i)] = pb;
        }
        if let Some(terms) = self.terms {
            let x = self.basis.design();
            let g = log_spectrum(self.basis, coeffs[0], &coeffs[1..]);
            let nf = g.len();
            // r_k = c_k (I_k e^{-g_k} - 1), w_k = c_k I_k e^{-g_k}
            let mut r = DVector::<f64>::zeros(nf);
            let mut w = vec![0.0; nf];
            for k in 0..nf {
                let e = terms.ordinates[k] * (-g[k]).exp();
                w[k] = terms.weights[k] * e;
                r[k] = terms.weights[k] * (e - 1.0);
            }
            // Augmented design Z = [1 | X].
            let mut z = DMatrix::<f64>::zeros(nf, d);
            z.column_mut(0).fill(1.0);
            z.columns_mut(1, d - 1).copy_from(x);
            grad += z.tr_mul(&r);
            let mut wz = z.clone();
            for (k, wk) in w.iter().enumerate() {
                wz.row_mut(k).scale_mut(wk.sqrt());
            }
            neg_h += wz.tr_mul(&wz);
        }
        (grad, neg_h)
    }
}

pub(crate) fn newton_mode(obj: &Objective<'_>, start: &[f64], ctl: NewtonControl) -> Result<ModeFit> {
    let d = obj.basis.n_basis() + 1;
    if start.len() != d {
        return Err(Error::InvalidInput(format!(
            "start has {} coefficients, expected {d}",
            start.len()
        )));
    }
    let mut theta = DVector::from_column_slice(start);
    let mut f = obj.value(theta.as_slice());
    if !f.is_finite() {
        return Err(Error::Numerical("objective is not finite at the start".into()));
    }
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (grad, neg_h) = obj.derivatives(theta.as_slice());
        let grad_norm = grad.amax();
        if !grad_norm.is_finite() {
            return Err(Error::Numerical("non-finite gradient in mode search".into()));
        }
        if grad_norm < ctl.tol || iterations >= ctl.max_iter {
            if grad_norm < ctl.tol {
                converged = true;
            }
            let chol = Cholesky::new(neg_h.clone()).ok_or_else(|| {
                Error::Numerical("negative Hessian is not positive definite".into())
            })?;
            return Ok(ModeFit {
                coeffs: theta,
                neg_hessian: neg_h,
                grad_norm,
                iterations,
                converged,
                chol,
            });
        }
        let chol = Cholesky::new(neg_h)
            .ok_or_else(|| Error::Numerical("negative Hessian is not positive definite".into()))?;
        let step = chol.solve(&grad);
        // Near the mode the predicted gain drops below the rounding error of
        // the objective and a value-based line search stalls; the full
        // Newton step is then taken unconditionally.
        if step.dot(&grad) < 1e-10 * (1.0 + f.abs()) {
            let cand = &theta + &step;
            let fc = obj.value(cand.as_slice());
            if fc.is_finite() {
                theta = cand;
                f = fc;
                iterations += 1;
                continue;
            }
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &theta + &step * scale;
            let fc = obj.value(cand.as_slice());
            if fc.is_finite() && fc >= f {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No ascent direction left at machine precision; report as is.
            let (grad, neg_h) = obj.derivatives(theta.as_slice());
            let grad_norm = grad.amax();
            let chol = Cholesky::new(neg_h.clone()).ok_or_else(|| {
                Error::Numerical("negative Hessian is not positive definite".into())
            })?;
            return Ok(ModeFit {
                coeffs: theta,
                neg_hessian: neg_h,
                grad_norm,
                iterations,
                converged: grad_norm < ctl.tol,
                chol,
            });
        }
    }
}

/// Newton ascent on the conditional log posterior of a (demeaned) segment.
pub fn conditional_mode(
    y_segment: &[f64],
    tau2: f64,
    basis: &BasisMatrix,
    prior: &SegmentPrior,
    start: &[f64],
    ctl: NewtonControl,
) -> Result<ModeFit> {
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return Err(Error::InvalidInput(format!("tau2 must be positive, got {tau2}")));
    }
    let terms = WhittleTerms::from_segment(y_segment)?;
    if terms.len() != basis.n_freqs() {
        return Err(Error::InvalidInput(format!(
            "segment has {} likelihood frequencies, basis has {}",
            terms.len(),
            basis.n_freqs()
        )));
    }
    let obj = Objective {
        terms: Some(&terms),
        basis,
        tau2,
        prior,
    };
    newton_mode(&obj, start, ctl)
}
