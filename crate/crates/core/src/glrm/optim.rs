//! Derivative-free simplex minimizer for the outer variance-parameter search.
//!
//! Plain Nelder-Mead with the classic coefficients. The Laplace objective is
//! cheap but non-smooth near variance boundaries, where simplex methods are
//! more dependable than quasi-Newton steps on finite-difference gradients.

/// Termination settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct NmOptions {
    pub max_evals: usize,
    pub tol_objective: f64,
    pub tol_param: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0` with per-dimension initial steps.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opt: &NmOptions,
) -> NmResult {
    let dim = x0.len();
    assert_eq!(steps.len(), dim);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opt.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = (0..dim)
            .map(|i| {
                let lo = simplex.iter().map(|(x, _)| x[i]).fold(f64::INFINITY, f64::min);
                let hi = simplex
                    .iter()
                    .map(|(x, _)| x[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        if (worst - best).abs() < opt.tol_objective && spread < opt.tol_param {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi;
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let point = |coef: f64, through: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(through)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = point(alpha, &simplex[dim].0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = point(gamma, &simplex[dim].0);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                // Outside contraction: between centroid and reflected point.
                let xc: Vec<f64> = centroid
                    .iter()
                    .zip(&xr)
                    .map(|(c, r)| c + rho * (r - c))
                    .collect();
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                // Inside contraction: between centroid and worst point.
                let xc: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[dim].0)
                    .map(|(c, w)| c + rho * (w - c))
                    .collect();
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best_x
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, v)| b + sigma * (v - b))
                        .collect();
                    let v = eval(&x, &mut evals);
                    *entry = (x, v);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    NmResult {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn options() -> NmOptions {
        NmOptions {
            max_evals: 10_000,
            tol_objective: 1e-10,
            tol_param: 1e-8,
        }
    }

    #[test]
    fn minimizes_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 2.0 * (x[1] + 0.5).powi(2);
        let r = nelder_mead(f, &[0.0, 0.0], &[0.5, 0.5], &options());
        assert!(r.converged);
        assert!((r.x[0] - 1.5).abs() < 1e-5);
        assert!((r.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], &options());
        assert!((r.x[0] - 1.0).abs() < 1e-3);
        assert!((r.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn respects_eval_budget() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let tight = NmOptions {
            max_evals: 20,
            tol_objective: 0.0,
            tol_param: 0.0,
        };
        let r = nelder_mead(f, &[5.0, 5.0, 5.0], &[1.0, 1.0, 1.0], &tight);
        assert!(!r.converged);
        assert!(r.evals <= 24); // budget plus at most one simplex operation
    }
}
