//! Laplace-approximated marginal likelihood for crossed random effects.
//!
//! The model has three random-effect blocks: workers, tasks, and one
//! interaction level per observed (worker, task) cell. Effects are
//! parameterized on the unit scale, `u = sigma * z` with `z ~ N(0, I)`, so the
//! penalized objective is `sum_n loglik(y_n | s_n) - ||z||^2 / 2` with
//! `s_n = sw*z_w[i] + st*z_t[j] + swt*z_c[n]` plus the model's fixed part.
//!
//! The marginal log-likelihood is approximated as
//! `pll(z_hat) - log det(I + L' Z' W Z L) / 2` at the conditional mode
//! `z_hat`. The Newton system for the mode and the determinant share sparse
//! structure: the interaction block is diagonal (one observation per cell),
//! and after eliminating it the worker block is also diagonal, leaving a dense
//! system only on the smaller of the two crossed factors.

use nalgebra::DMatrix;

/// Observation design for a crossed two-factor model.
#[derive(Debug, Clone)]
pub(crate) struct CrossedDesign {
    pub n_workers: usize,
    pub n_tasks: usize,
    pub worker_idx: Vec<u32>,
    pub task_idx: Vec<u32>,
    /// Category index per observation (0/1 for binary).
    pub response: Vec<u8>,
}

impl CrossedDesign {
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    /// Total length of the z vector: workers, tasks, then interactions.
    pub fn dim(&self) -> usize {
        self.n_workers + self.n_tasks + self.n_obs()
    }
}

/// Per-observation likelihood contributions as a function of the
/// random-effect sum `s`.
pub(crate) trait ObsModel {
    /// Returns `(loglik, d loglik/ds, -d2 loglik/ds2)`.
    fn eval(&self, y: u8, s: f64) -> (f64, f64, f64);

    fn loglik(&self, y: u8, s: f64) -> f64 {
        self.eval(y, s).0
    }
}

/// Bernoulli response with logit link; `eta = intercept + s`.
pub(crate) struct BinaryLogit {
    pub intercept: f64,
}

impl ObsModel for BinaryLogit {
    #[inline]
    fn eval(&self, y: u8, s: f64) -> (f64, f64, f64) {
        let eta = self.intercept + s;
        let p = crate::numeric::logistic(eta);
        let ll = f64::from(y) * eta - crate::numeric::log1p_exp(eta);
        (ll, f64::from(y) - p, (p * (1.0 - p)).max(1e-12))
    }
}

/// Cumulative-logit (proportional odds) response.
///
/// `P(y <= k) = logistic(r_k - s)` with strictly increasing thresholds, so
/// larger `s` shifts mass to higher categories.
pub(crate) struct CumulativeLogit {
    pub thresholds: Vec<f64>,
}

impl CumulativeLogit {
    #[inline]
    fn cdf_pdf(&self, bound: Option<f64>, s: f64, upper: bool) -> (f64, f64, f64) {
        // Returns (F, f, f') at `r - s`, with the missing bound treated as
        // an infinite tail.
        match bound {
            None => {
                if upper {
                    (1.0, 0.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Some(r) => {
                let x = r - s;
                let big_f = crate::numeric::logistic(x);
                let f = big_f * (1.0 - big_f);
                (big_f, f, f * (1.0 - 2.0 * big_f))
            }
        }
    }
}

impl ObsModel for CumulativeLogit {
    #[inline]
    fn eval(&self, y: u8, s: f64) -> (f64, f64, f64) {
        let y = y as usize;
        let km1 = self.thresholds.len();
        let hi = if y < km1 { Some(self.thresholds[y]) } else { None };
        let lo = if y > 0 { Some(self.thresholds[y - 1]) } else { None };
        let (fa, fa_pdf, fa_d) = self.cdf_pdf(hi, s, true);
        let (fb, fb_pdf, fb_d) = self.cdf_pdf(lo, s, false);
        let p = (fa - fb).max(1e-300);
        let ll = p.ln();
        // d/ds of F(r - s) is -f(r - s).
        let p_s = fb_pdf - fa_pdf;
        let p_ss = fa_d - fb_d;
        let g1 = p_s / p;
        let w = (g1 * g1 - p_ss / p).max(1e-10);
        (ll, g1, w)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerResult {
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solver scratch bound to one design; reusable across objective evaluations.
pub(crate) struct LaplaceSolver<'a> {
    design: &'a CrossedDesign,
    /// True when workers are the diagonally eliminated (larger) factor.
    workers_eliminated: bool,
    n_a: usize,
    n_b: usize,
    /// Observation ids grouped by eliminated-factor level.
    obs_by_a: Vec<Vec<u32>>,
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl<'a> LaplaceSolver<'a> {
    pub fn new(design: &'a CrossedDesign) -> Self {
        let workers_eliminated = design.n_workers >= design.n_tasks;
        let (n_a, n_b) = if workers_eliminated {
            (design.n_workers, design.n_tasks)
        } else {
            (design.n_tasks, design.n_workers)
        };
        let mut obs_by_a = vec![Vec::new(); n_a];
        for n in 0..design.n_obs() {
            let a = if workers_eliminated {
                design.worker_idx[n]
            } else {
                design.task_idx[n]
            };
            obs_by_a[a as usize].push(n as u32);
        }
        Self {
            design,
            workers_eliminated,
            n_a,
            n_b,
            obs_by_a,
            inner_tol: 1e-8,
            max_inner: 200,
        }
    }

    #[inline]
    fn a_of(&self, n: usize) -> usize {
        if self.workers_eliminated {
            self.design.worker_idx[n] as usize
        } else {
            self.design.task_idx[n] as usize
        }
    }

    #[inline]
    fn b_of(&self, n: usize) -> usize {
        if self.workers_eliminated {
            self.design.task_idx[n] as usize
        } else {
            self.design.worker_idx[n] as usize
        }
    }

    /// Find the conditional mode of `z` and return the Laplace marginal
    /// log-likelihood. `z` is updated in place and may carry a warm start.
    pub fn laplace_loglik(
        &self,
        model: &dyn ObsModel,
        sigma_workers: f64,
        sigma_tasks: f64,
        sigma_inter: f64,
        z: &mut [f64],
    ) -> InnerResult {
        let d = self.design;
        let (nw, nt, n) = (d.n_workers, d.n_tasks, d.n_obs());
        debug_assert_eq!(z.len(), d.dim());
        let (sa, sb) = if self.workers_eliminated {
            (sigma_workers, sigma_tasks)
        } else {
            (sigma_tasks, sigma_workers)
        };

        let mut s = vec![0.0f64; n];
        let mut ll = vec![0.0f64; n];
        let mut g1 = vec![0.0f64; n];
        let mut wgt = vec![0.0f64; n];

        let eval_all = |z: &[f64], s: &mut [f64], ll: &mut [f64], g1: &mut [f64], wgt: &mut [f64]| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let wi = d.worker_idx[i] as usize;
                let tj = d.task_idx[i] as usize;
                s[i] = sigma_workers * z[wi]
                    + sigma_tasks * z[nw + tj]
                    + sigma_inter * z[nw + nt + i];
                let (l, g, w) = model.eval(d.response[i], s[i]);
                ll[i] = l;
                g1[i] = g;
                wgt[i] = w;
                total += l;
            }
            total - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
        };

        let mut pll = eval_all(z, &mut s, &mut ll, &mut g1, &mut wgt);
        let mut iterations = 0;
        let mut converged = false;

        let mut grad = vec![0.0f64; d.dim()];
        let mut step_dir = vec![0.0f64; d.dim()];
        let mut z_try = vec![0.0f64; d.dim()];
        let mut s_try = vec![0.0f64; n];
        let mut ll_try = vec![0.0f64; n];
        let mut g1_try = vec![0.0f64; n];
        let mut wgt_try = vec![0.0f64; n];

        for it in 0..self.max_inner {
            iterations = it + 1;
            // Penalized gradient.
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                let wi = d.worker_idx[i] as usize;
                let tj = d.task_idx[i] as usize;
                grad[wi] += sigma_workers * g1[i];
                grad[nw + tj] += sigma_tasks * g1[i];
                grad[nw + nt + i] = sigma_inter * g1[i];
            }
            for (g, zi) in grad.iter_mut().zip(z.iter()) {
                *g -= zi;
            }
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax < self.inner_tol {
                converged = true;
                break;
            }

            self.newton_direction(
                sa, sb, sigma_inter, &wgt, &grad, &mut step_dir,
            );

            // Step halving on the penalized objective.
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                for (zt, (zi, di)) in z_try.iter_mut().zip(z.iter().zip(&step_dir)) {
                    *zt = zi + step * di;
                }
                let pll_try = eval_all(&z_try, &mut s_try, &mut ll_try, &mut g1_try, &mut wgt_try);
                if pll_try >= pll - 1e-12 * (1.0 + pll.abs()) {
                    z.copy_from_slice(&z_try);
                    std::mem::swap(&mut s, &mut s_try);
                    std::mem::swap(&mut ll, &mut ll_try);
                    std::mem::swap(&mut g1, &mut g1_try);
                    std::mem::swap(&mut wgt, &mut wgt_try);
                    pll = pll_try;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break; // no ascent possible; treat current point as the mode
            }
        }

        let logdet = self.log_det(sa, sb, sigma_inter, &wgt);
        InnerResult {
            loglik: pll - 0.5 * logdet,
            iterations,
            converged,
        }
    }

    /// Solve `(I + L'Z'WZL) d = grad` by two-stage block elimination.
    fn newton_direction(
        &self,
        sa: f64,
        sb: f64,
        sc: f64,
        wgt: &[f64],
        grad: &[f64],
        out: &mut [f64],
    ) {
        let d = self.design;
        let (nw, nt, n) = (d.n_workers, d.n_tasks, d.n_obs());
        let (off_a, off_b) = if self.workers_eliminated {
            (0, nw)
        } else {
            (nw, 0)
        };

        // Interaction elimination.
        let mut wtil = vec![0.0f64; n];
        let mut da = vec![1.0f64; self.n_a];
        let mut db = vec![1.0f64; self.n_b];
        let mut ra: Vec<f64> = (0..self.n_a).map(|i| grad[off_a + i]).collect();
        let mut rb: Vec<f64> = (0..self.n_b).map(|j| grad[off_b + j]).collect();
        for i in 0..n {
            let c = 1.0 + sc * sc * wgt[i];
            wtil[i] = wgt[i] / c;
            let (ai, bi) = (self.a_of(i), self.b_of(i));
            da[ai] += sa * sa * wtil[i];
            db[bi] += sb * sb * wtil[i];
            let rc = grad[nw + nt + i];
            ra[ai] -= sa * sc * wtil[i] * rc;
            rb[bi] -= sb * sc * wtil[i] * rc;
        }

        // Eliminate the A factor, leaving a dense system on B.
        let (t, rhs_b) = self.schur_b(sa, sb, &wtil, &da, &ra, &rb);
        let sol_b = cholesky_solve(t, rhs_b);

        // Back-substitute A, then interactions.
        let mut sol_a = ra;
        for i in 0..n {
            let (ai, bi) = (self.a_of(i), self.b_of(i));
            sol_a[ai] -= sa * sb * wtil[i] * sol_b[bi];
        }
        for (v, dia) in sol_a.iter_mut().zip(&da) {
            *v /= dia;
        }
        let (sw, st) = if self.workers_eliminated {
            (sa, sb)
        } else {
            (sb, sa)
        };
        for i in 0..n {
            let wi = d.worker_idx[i] as usize;
            let tj = d.task_idx[i] as usize;
            let (dw, dt) = if self.workers_eliminated {
                (sol_a[wi], sol_b[tj])
            } else {
                (sol_a[tj], sol_b[wi])
            };
            let c = 1.0 + sc * sc * wgt[i];
            out[nw + nt + i] = (grad[nw + nt + i] - sc * wgt[i] * (sw * dw + st * dt)) / c;
        }
        for (i, v) in sol_a.iter().enumerate() {
            out[off_a + i] = *v;
        }
        for (j, v) in sol_b.iter().enumerate() {
            out[off_b + j] = *v;
        }
    }

    /// Dense Schur complement on the B factor and the reduced right-hand side.
    fn schur_b(
        &self,
        sa: f64,
        sb: f64,
        wtil: &[f64],
        da: &[f64],
        ra: &[f64],
        rb: &[f64],
    ) -> (DMatrix<f64>, Vec<f64>) {
        let nb = self.n_b;
        let mut t = DMatrix::<f64>::zeros(nb, nb);
        let mut rhs = rb.to_vec();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (a, obs) in self.obs_by_a.iter().enumerate() {
            entries.clear();
            for &n in obs {
                let n = n as usize;
                entries.push((self.b_of(n), sa * sb * wtil[n]));
            }
            let inv_da = 1.0 / da[a];
            for (idx1, &(b1, x1)) in entries.iter().enumerate() {
                rhs[b1] -= x1 * inv_da * ra[a];
                let scaled = x1 * inv_da;
                for &(b2, x2) in &entries[idx1..] {
                    t[(b1.max(b2), b1.min(b2))] -= scaled * x2;
                }
            }
        }
        // Diagonal of the B block, plus mirror to the upper triangle.
        let mut db = vec![1.0f64; nb];
        for n in 0..self.design.n_obs() {
            db[self.b_of(n)] += sb * sb * wtil[n];
        }
        for b1 in 0..nb {
            t[(b1, b1)] += db[b1];
            for b2 in (b1 + 1)..nb {
                t[(b1, b2)] = t[(b2, b1)];
            }
        }
        (t, rhs)
    }

    /// `log det(I + L'Z'WZL)` at the current weights.
    fn log_det(&self, sa: f64, sb: f64, sc: f64, wgt: &[f64]) -> f64 {
        let n = self.design.n_obs();
        let mut wtil = vec![0.0f64; n];
        let mut da = vec![1.0f64; self.n_a];
        let mut logdet = 0.0;
        for i in 0..n {
            let c = 1.0 + sc * sc * wgt[i];
            logdet += c.ln();
            wtil[i] = wgt[i] / c;
            da[self.a_of(i)] += sa * sa * wtil[i];
        }
        for &v in &da {
            logdet += v.ln();
        }
        let zeros_a = vec![0.0f64; self.n_a];
        let zeros_b = vec![0.0f64; self.n_b];
        let (t, _) = self.schur_b(sa, sb, &wtil, &da, &zeros_a, &zeros_b);
        logdet += cholesky_logdet(t);
        logdet
    }
}

fn cholesky_with_jitter(mut m: DMatrix<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let n = m.nrows();
    let mut jitter = 0.0;
    for attempt in 0..8 {
        if attempt > 0 {
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = m.clone().cholesky() {
            return ch;
        }
    }
    panic!("Schur complement not positive definite after jitter escalation");
}

fn cholesky_solve(m: DMatrix<f64>, rhs: Vec<f64>) -> Vec<f64> {
    let ch = cholesky_with_jitter(m);
    let x = ch.solve(&nalgebra::DVector::from_vec(rhs));
    x.data.into()
}

fn cholesky_logdet(m: DMatrix<f64>) -> f64 {
    let ch = cholesky_with_jitter(m);
    let l = ch.l();
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += l[(i, i)].ln();
    }
    2.0 * s
}
