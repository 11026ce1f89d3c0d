//! Nelder-Mead minimization.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexOptions {
    /// Stop when the spread of objective values across the simplex falls
    /// below `ftol * (1 + |f_best|)`.
    pub ftol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex along each axis.
    pub step: f64,
    /// Number of times the search is restarted from the best vertex after
    /// converging; guards against a collapsed simplex.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-8,
            max_evals: 5000,
            step: 0.5,
            restarts: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0`. Non-finite objective values are treated as
/// `+inf`-like (a very large constant) so the simplex retreats from them.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX / 4.0
        }
    };
    let mut best_x = x0.to_vec();
    let mut best_v = eval(&best_x, &mut evals);
    let mut converged = false;
    for _ in 0..=opts.restarts {
        let (x, v, ok) = run(&mut eval, &best_x, best_v, opts, &mut evals);
        let improved = v < best_v - opts.ftol * (1.0 + best_v.abs());
        if v <= best_v {
            best_x = x;
            best_v = v;
        }
        converged = ok;
        if !ok || !improved || evals >= opts.max_evals {
            break;
        }
    }
    SimplexResult {
        x: best_x,
        value: best_v,
        evals,
        converged,
    }
}

fn run<E>(eval: &mut E, x0: &[f64], f0: f64, opts: SimplexOptions, evals: &mut usize) -> (Vec<f64>, f64, bool)
where
    E: FnMut(&[f64], &mut usize) -> f64,
{
    let d = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals = vec![f0];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += opts.step;
        vals.push(eval(&p, evals));
        pts.push(p);
    }
    let mut order: Vec<usize> = (0..=d).collect();
    loop {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (lo, hi) = (order[0], order[d]);
        if vals[hi] - vals[lo] <= opts.ftol * (1.0 + vals[lo].abs()) {
            return (pts[lo].clone(), vals[lo], true);
        }
        if *evals >= opts.max_evals {
            return (pts[lo].clone(), vals[lo], false);
        }
        let second = order[d - 1];
        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (c, p) in centroid.iter_mut().zip(&pts[i]) {
                *c += p / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[hi])
                .map(|(c, h)| c + t * (h - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, evals);
        if fr < vals[lo] {
            let xe = along(-2.0);
            let fe = eval(&xe, evals);
            if fe < fr {
                pts[hi] = xe;
                vals[hi] = fe;
            } else {
                pts[hi] = xr;
                vals[hi] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[hi] = xr;
            vals[hi] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[hi] {
            let x = along(-0.5);
            let v = eval(&x, evals);
            (x, v)
        } else {
            let x = along(0.5);
            let v = eval(&x, evals);
            (x, v)
        };
        if fc < vals[hi].min(fr) {
            pts[hi] = xc;
            vals[hi] = fc;
            continue;
        }
        let best = pts[lo].clone();
        for &i in &order[1..] {
            for (p, b) in pts[i].iter_mut().zip(&best) {
                *p = b + 0.5 * (*p - b);
            }
            vals[i] = eval(&pts[i], evals);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let r = minimize(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 1.0,
            &[0.0, 0.0],
            SimplexOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] + 2.0).abs() < 1e-3);
        assert!((r.value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            SimplexOptions {
                ftol: 1e-12,
                ..SimplexOptions::default()
            },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{r:?}");
    }

    #[test]
    fn respects_evaluation_budget() {
        let r = minimize(
            |x| x.iter().map(|v| v.abs().sqrt()).sum::<f64>(),
            &[3.0; 6],
            SimplexOptions {
                max_evals: 50,
                ftol: 0.0,
                ..SimplexOptions::default()
            },
        );
        assert!(!r.converged);
        assert!(r.evals <= 50 + 7);
    }

    #[test]
    fn non_finite_values_are_avoided() {
        let r = minimize(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) },
            &[2.0],
            SimplexOptions::default(),
        );
        assert!((r.x[0] - 0.5).abs() < 1e-3);
    }
}
