//! Crossed random-effects model fits and consistency metrics.
//!
//! Binary responses use a logit link with random intercepts for workers,
//! tasks, and their interaction; ordinal responses use a cumulative-logit
//! variant with shared variance components; nominal responses are handled as
//! one-vs-reference binary fits with per-category components. The marginal
//! likelihood is Laplace-approximated; variance parameters are optimized on
//! the log-standard-deviation scale so estimates are nonnegative by
//! construction.

mod baselines;
pub(crate) mod laplace;
mod optim;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::fleiss_kappa;

use crate::data::{Dataset, ResponseScale, ScaleKind};
use crate::numeric::logistic;
use laplace::{BinaryLogit, CrossedDesign, CumulativeLogit, LaplaceSolver, ObsModel};
use optim::{nelder_mead, NmOptions};

/// Variance components of one crossed random-effects fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_workers: f64,
    pub sigma2_tasks: f64,
    pub sigma2_interaction: f64,
}

impl VarianceComponents {
    pub fn new(sigma2_workers: f64, sigma2_tasks: f64, sigma2_interaction: f64) -> Self {
        assert!(
            sigma2_workers >= 0.0 && sigma2_tasks >= 0.0 && sigma2_interaction >= 0.0,
            "variance components must be nonnegative"
        );
        Self {
            sigma2_workers,
            sigma2_tasks,
            sigma2_interaction,
        }
    }

    pub fn total(&self) -> f64 {
        self.sigma2_workers + self.sigma2_tasks + self.sigma2_interaction
    }
}

/// Per-category components for nominal fits (one entry per non-reference
/// category).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalVarianceComponents {
    pub per_category: Vec<VarianceComponents>,
}

/// Fixed parameters of the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffects {
    /// Binary intercept.
    Intercept(f64),
    /// Strictly increasing ordinal thresholds.
    Thresholds(Vec<f64>),
    /// One intercept per non-reference category (nominal fits).
    CategoryIntercepts(Vec<f64>),
}

/// Conditional modes of the random effects, on the natural (sigma * z) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RanefModes {
    pub workers: Vec<f64>,
    pub tasks: Vec<f64>,
    pub interactions: Vec<f64>,
}

/// Either a single set of components or per-category nominal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Components {
    Single(VarianceComponents),
    PerCategory(NominalVarianceComponents),
}

/// A converged (or best-effort) crossed random-effects fit.
#[derive(Debug, Clone, Serialize)]
pub struct FittedGlrm {
    pub scale: ResponseScale,
    pub fixed: FixedEffects,
    pub vc: Components,
    /// Absent for nominal fits, which are collections of sub-fits.
    pub ranef_modes: Option<RanefModes>,
    /// Laplace-approximated marginal log-likelihood.
    pub loglik: f64,
    pub converged: bool,
    pub n_obs: usize,
    /// Components whose SD estimate hit the lower boundary.
    pub boundary_components: Vec<String>,
    pub warnings: Vec<String>,
    pub outer_evals: usize,
    #[serde(skip)]
    pub(crate) raw: RawFit,
}

impl FittedGlrm {
    /// The single-component variance set, when this is a binary/ordinal fit.
    pub fn variance_components(&self) -> Option<&VarianceComponents> {
        match &self.vc {
            Components::Single(vc) => Some(vc),
            Components::PerCategory(_) => None,
        }
    }

    /// Spammer index of this fit, dispatching on the component type.
    pub fn spammer_index(&self) -> Result<f64, FitError> {
        match &self.vc {
            Components::Single(vc) => spammer_index(vc),
            Components::PerCategory(nvc) => spammer_index_nominal(nvc),
        }
    }
}

/// Outer-optimizer settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_outer_evals: usize,
    pub tol_objective: f64,
    pub tol_param: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_outer_evals: 1_000_000,
            tol_objective: 1e-6,
            tol_param: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("wrong scale for this fit: {0}")]
    WrongScale(String),
    #[error("all variance components are zero; the ratio is undefined")]
    AllZeroComponents,
    #[error("insufficient raters: {0}")]
    InsufficientRaters(String),
    #[error("category {category} has too few paired records for a one-vs-reference fit")]
    EmptyContrast { category: usize },
}

/// SD estimates below this are reported as a zero variance component.
const BOUNDARY_SD: f64 = 6.14e-6; // exp(-12)

/// Ratio of worker variance to total random-effect variance.
pub fn spammer_index(vc: &VarianceComponents) -> Result<f64, FitError> {
    let total = vc.total();
    if total <= 0.0 {
        return Err(FitError::AllZeroComponents);
    }
    Ok(vc.sigma2_workers / total)
}

/// Nominal-scale spammer index: summed worker variance over summed totals.
pub fn spammer_index_nominal(nvc: &NominalVarianceComponents) -> Result<f64, FitError> {
    let num: f64 = nvc.per_category.iter().map(|c| c.sigma2_workers).sum();
    let den: f64 = nvc.per_category.iter().map(|c| c.total()).sum();
    if den <= 0.0 {
        return Err(FitError::AllZeroComponents);
    }
    Ok(num / den)
}

/// Worker-variance ratio with the standard logistic variance added to the
/// denominator as a fixed pseudo-error term.
pub fn icc_fixed_error(vc: &VarianceComponents) -> f64 {
    let logistic_variance = std::f64::consts::PI.powi(2) / 3.0;
    vc.sigma2_workers / (vc.total() + logistic_variance)
}

// ---------------------------------------------------------------------------
// Internal fit driver shared by the public fits and the deletion refits.
// ---------------------------------------------------------------------------

/// Raw optimizer outcome on one design.
#[derive(Debug, Clone)]
pub(crate) struct DesignFit {
    pub params: Vec<f64>,
    pub z: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub evals: usize,
}

/// Raw optimizer state kept for warm-started refits; not serialized.
#[derive(Debug, Clone)]
pub(crate) enum RawFit {
    Single { params: Vec<f64>, z: Vec<f64> },
    PerCategory { params: Vec<Vec<f64>> },
}

pub(crate) struct WarmStart<'a> {
    pub params: &'a [f64],
    /// Mode vector already mapped to the (possibly reduced) design layout.
    pub z: Vec<f64>,
}

fn sigma_from_log_sd(ls: f64) -> f64 {
    ls.clamp(-20.0, 6.0).exp()
}

enum ModelSpec {
    Binary,
    Ordinal { k: usize },
}

impl ModelSpec {
    fn n_fixed(&self) -> usize {
        match self {
            ModelSpec::Binary => 1,
            ModelSpec::Ordinal { k } => k - 1,
        }
    }

    fn build(&self, params: &[f64]) -> Box<dyn ObsModel> {
        match self {
            ModelSpec::Binary => Box::new(BinaryLogit {
                intercept: params[0],
            }),
            ModelSpec::Ordinal { k } => Box::new(CumulativeLogit {
                thresholds: decode_thresholds(&params[..k - 1]),
            }),
        }
    }
}

/// Thresholds are parameterized as a free first cut plus log increments, so
/// they are strictly increasing for any parameter vector.
fn decode_thresholds(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut r = raw[0];
    out.push(r);
    for &d in &raw[1..] {
        r += d.clamp(-8.0, 4.0).exp();
        out.push(r);
    }
    out
}

fn optimize(
    design: &CrossedDesign,
    spec: &ModelSpec,
    config: &FitConfig,
    x0: Vec<f64>,
    rounds: &[f64],
    warm_z: Option<Vec<f64>>,
) -> DesignFit {
    let solver = LaplaceSolver::new(design);
    let nf = spec.n_fixed();
    let state = RefCell::new(warm_z.unwrap_or_else(|| vec![0.0; design.dim()]));
    let objective = |x: &[f64]| -> f64 {
        let model = spec.build(x);
        let sw = sigma_from_log_sd(x[nf]);
        let st = sigma_from_log_sd(x[nf + 1]);
        let swt = sigma_from_log_sd(x[nf + 2]);
        let mut z = state.borrow_mut();
        -solver
            .laplace_loglik(model.as_ref(), sw, st, swt, &mut z)
            .loglik
    };

    let mut best_x = x0;
    let mut evals_used = 0usize;
    let mut converged = false;
    for (round, &scale) in rounds.iter().enumerate() {
        let budget = config.max_outer_evals.saturating_sub(evals_used);
        if budget < 10 {
            break;
        }
        let mut steps = vec![scale; best_x.len()];
        if round == 0 {
            // A slightly larger first step on the fixed part speeds the cold
            // search without affecting the optimum.
            let cut = nf.min(steps.len());
            steps[..cut].iter_mut().for_each(|s| *s *= 1.2);
        }
        let r = nelder_mead(
            &objective,
            &best_x,
            &steps,
            &NmOptions {
                max_evals: budget,
                tol_objective: config.tol_objective,
                tol_param: config.tol_param,
            },
        );
        best_x = r.x;
        evals_used += r.evals;
        converged = r.converged;
    }

    // Refresh the mode at the returned optimum.
    let final_value = -objective(&best_x);
    evals_used += 1;
    DesignFit {
        params: best_x,
        z: state.into_inner(),
        loglik: final_value,
        converged,
        evals: evals_used,
    }
}

pub(crate) fn fit_binary_design(
    design: &CrossedDesign,
    config: &FitConfig,
    warm: Option<WarmStart<'_>>,
) -> DesignFit {
    let spec = ModelSpec::Binary;
    match warm {
        Some(w) => optimize(
            design,
            &spec,
            config,
            w.params.to_vec(),
            &[0.12],
            Some(w.z),
        ),
        None => {
            let ybar = design.response.iter().map(|&y| f64::from(y)).sum::<f64>()
                / design.n_obs().max(1) as f64;
            let beta0 = (ybar.clamp(0.02, 0.98) / (1.0 - ybar.clamp(0.02, 0.98))).ln();
            let x0 = vec![beta0, -0.7, 0.0, -0.7];
            optimize(design, &spec, config, x0, &[0.5, 0.1], None)
        }
    }
}

pub(crate) fn fit_ordinal_design(
    design: &CrossedDesign,
    k: usize,
    config: &FitConfig,
    warm: Option<WarmStart<'_>>,
) -> DesignFit {
    let spec = ModelSpec::Ordinal { k };
    match warm {
        Some(w) => optimize(
            design,
            &spec,
            config,
            w.params.to_vec(),
            &[0.12],
            Some(w.z),
        ),
        None => {
            // Start thresholds at the empirical cumulative logits.
            let n = design.n_obs() as f64;
            let mut counts = vec![0usize; k];
            for &y in &design.response {
                counts[y as usize] += 1;
            }
            let mut cuts = Vec::with_capacity(k - 1);
            let mut cum = 0.0;
            for &c in counts.iter().take(k - 1) {
                cum += c as f64;
                let p = (cum / n).clamp(0.01, 0.99);
                let cut = (p / (1.0 - p)).ln();
                let floor = cuts.last().map_or(f64::NEG_INFINITY, |&prev| prev + 0.05);
                cuts.push(cut.max(floor));
            }
            let mut x0 = vec![cuts[0]];
            for w in cuts.windows(2) {
                x0.push((w[1] - w[0]).max(0.05).ln());
            }
            x0.extend_from_slice(&[-0.7, 0.0, -0.7]);
            optimize(design, &spec, config, x0, &[0.4, 0.1], None)
        }
    }
}

fn components_from_params(
    log_sds: &[f64],
    boundary: &mut Vec<String>,
) -> VarianceComponents {
    let names = ["workers", "tasks", "interaction"];
    let mut out = [0.0f64; 3];
    for i in 0..3 {
        let sd = sigma_from_log_sd(log_sds[i]);
        if sd < BOUNDARY_SD {
            out[i] = 0.0;
            boundary.push(names[i].to_string());
        } else {
            out[i] = sd * sd;
        }
    }
    VarianceComponents::new(out[0], out[1], out[2])
}

pub(crate) fn design_from_dataset(d: &Dataset) -> CrossedDesign {
    let mut worker_idx = Vec::with_capacity(d.records().len());
    let mut task_idx = Vec::with_capacity(d.records().len());
    let mut response = Vec::with_capacity(d.records().len());
    for (r, &(wi, tj)) in d.records().iter().zip(d.dense_rows()) {
        worker_idx.push(wi);
        task_idx.push(tj);
        response.push(r.response as u8);
    }
    CrossedDesign {
        n_workers: d.n_workers(),
        n_tasks: d.n_tasks(),
        worker_idx,
        task_idx,
        response,
    }
}

fn separation_warnings(design: &CrossedDesign) -> Vec<String> {
    let mut first_w: Vec<Option<u8>> = vec![None; design.n_workers];
    let mut mixed_w = vec![false; design.n_workers];
    let mut first_t: Vec<Option<u8>> = vec![None; design.n_tasks];
    let mut mixed_t = vec![false; design.n_tasks];
    for i in 0..design.n_obs() {
        let (wi, tj) = (
            design.worker_idx[i] as usize,
            design.task_idx[i] as usize,
        );
        let y = design.response[i];
        match first_w[wi] {
            None => first_w[wi] = Some(y),
            Some(v) if v != y => mixed_w[wi] = true,
            _ => {}
        }
        match first_t[tj] {
            None => first_t[tj] = Some(y),
            Some(v) if v != y => mixed_t[tj] = true,
            _ => {}
        }
    }
    let cw = mixed_w.iter().filter(|m| !**m).count();
    let ct = mixed_t.iter().filter(|m| !**m).count();
    let mut warnings = Vec::new();
    if cw > 0 {
        warnings.push(format!(
            "separation: {cw} worker(s) gave all-identical responses; their component may sit at the boundary"
        ));
    }
    if ct > 0 {
        warnings.push(format!(
            "separation: {ct} task(s) received all-identical responses; their component may sit at the boundary"
        ));
    }
    warnings
}

fn ranef_from_z(z: &[f64], design: &CrossedDesign, sds: (f64, f64, f64)) -> RanefModes {
    let (nw, nt) = (design.n_workers, design.n_tasks);
    RanefModes {
        workers: z[..nw].iter().map(|v| v * sds.0).collect(),
        tasks: z[nw..nw + nt].iter().map(|v| v * sds.1).collect(),
        interactions: z[nw + nt..].iter().map(|v| v * sds.2).collect(),
    }
}

/// Fit the binary crossed random-effects model.
///
/// Non-convergence is reported through `converged = false` rather than an
/// error, with the best parameters found so far.
pub fn fit_binary_glrm(d: &Dataset, config: &FitConfig) -> Result<FittedGlrm, FitError> {
    if d.scale().kind() != ScaleKind::Binary {
        return Err(FitError::WrongScale(
            "fit_binary_glrm requires a binary scale".into(),
        ));
    }
    let design = design_from_dataset(d);
    let warnings = separation_warnings(&design);
    let fit = fit_binary_design(&design, config, None);
    let mut boundary = Vec::new();
    let vc = components_from_params(&fit.params[1..4], &mut boundary);
    let sds = (
        sigma_from_log_sd(fit.params[1]),
        sigma_from_log_sd(fit.params[2]),
        sigma_from_log_sd(fit.params[3]),
    );
    Ok(FittedGlrm {
        scale: d.scale().clone(),
        fixed: FixedEffects::Intercept(fit.params[0]),
        vc: Components::Single(vc),
        ranef_modes: Some(ranef_from_z(&fit.z, &design, sds)),
        loglik: fit.loglik,
        converged: fit.converged,
        n_obs: design.n_obs(),
        boundary_components: boundary,
        warnings,
        outer_evals: fit.evals,
        raw: RawFit::Single {
            params: fit.params,
            z: fit.z,
        },
    })
}

/// Fit the cumulative-logit model for ordinal responses (K >= 3).
pub fn fit_ordinal_glrm(d: &Dataset, config: &FitConfig) -> Result<FittedGlrm, FitError> {
    let k = d.scale().num_categories();
    if d.scale().kind() != ScaleKind::Ordinal || k < 3 {
        return Err(FitError::WrongScale(
            "fit_ordinal_glrm requires an ordinal scale with K >= 3; use fit_binary_glrm for K = 2"
                .into(),
        ));
    }
    let design = design_from_dataset(d);
    let mut warnings = separation_warnings(&design);
    let mut counts = vec![0usize; k];
    for &y in &design.response {
        counts[y as usize] += 1;
    }
    for (c, count) in counts.iter().enumerate() {
        if *count == 0 {
            warnings.push(format!(
                "degenerate category: {:?} never observed; adjacent thresholds are pushed together",
                d.scale().labels()[c]
            ));
        }
    }
    let fit = fit_ordinal_design(&design, k, config, None);
    let mut boundary = Vec::new();
    let vc = components_from_params(&fit.params[k - 1..k + 2], &mut boundary);
    let sds = (
        sigma_from_log_sd(fit.params[k - 1]),
        sigma_from_log_sd(fit.params[k]),
        sigma_from_log_sd(fit.params[k + 1]),
    );
    Ok(FittedGlrm {
        scale: d.scale().clone(),
        fixed: FixedEffects::Thresholds(decode_thresholds(&fit.params[..k - 1])),
        vc: Components::Single(vc),
        ranef_modes: Some(ranef_from_z(&fit.z, &design, sds)),
        loglik: fit.loglik,
        converged: fit.converged,
        n_obs: design.n_obs(),
        boundary_components: boundary,
        warnings,
        outer_evals: fit.evals,
        raw: RawFit::Single {
            params: fit.params,
            z: fit.z,
        },
    })
}

/// One one-vs-reference binary design per non-reference category.
pub(crate) fn nominal_subset_designs(design: &CrossedDesign, k: usize) -> Vec<CrossedDesign> {
    (1..k)
        .map(|cat| {
            let mut wmap = vec![u32::MAX; design.n_workers];
            let mut tmap = vec![u32::MAX; design.n_tasks];
            let mut sub = CrossedDesign {
                n_workers: 0,
                n_tasks: 0,
                worker_idx: Vec::new(),
                task_idx: Vec::new(),
                response: Vec::new(),
            };
            for i in 0..design.n_obs() {
                let y = design.response[i] as usize;
                if y != 0 && y != cat {
                    continue;
                }
                let wi = design.worker_idx[i] as usize;
                let tj = design.task_idx[i] as usize;
                if wmap[wi] == u32::MAX {
                    wmap[wi] = sub.n_workers as u32;
                    sub.n_workers += 1;
                }
                if tmap[tj] == u32::MAX {
                    tmap[tj] = sub.n_tasks as u32;
                    sub.n_tasks += 1;
                }
                sub.worker_idx.push(wmap[wi]);
                sub.task_idx.push(tmap[tj]);
                sub.response.push(u8::from(y == cat));
            }
            sub
        })
        .collect()
}

/// Fit per-category variance components for a nominal scale (K >= 3) as
/// K - 1 one-vs-reference binary fits.
pub fn fit_nominal_glrm(d: &Dataset, config: &FitConfig) -> Result<FittedGlrm, FitError> {
    let k = d.scale().num_categories();
    if d.scale().kind() != ScaleKind::Nominal || k < 3 {
        return Err(FitError::WrongScale(
            "fit_nominal_glrm requires a nominal scale with K >= 3; use fit_binary_glrm for K = 2"
                .into(),
        ));
    }
    let design = design_from_dataset(d);
    let subsets = nominal_subset_designs(&design, k);
    let mut per_category = Vec::with_capacity(k - 1);
    let mut intercepts = Vec::with_capacity(k - 1);
    let mut loglik = 0.0;
    let mut converged = true;
    let mut boundary = Vec::new();
    let mut warnings = Vec::new();
    let mut evals = 0;
    let mut raw_params = Vec::with_capacity(k - 1);
    for (cat, sub) in subsets.iter().enumerate() {
        let cat = cat + 1;
        if sub.n_obs() < 4 || sub.n_workers < 2 || sub.n_tasks < 2 {
            return Err(FitError::EmptyContrast { category: cat });
        }
        if sub.response.iter().all(|&y| y == 0) || sub.response.iter().all(|&y| y == 1) {
            warnings.push(format!(
                "category {cat}: one-vs-reference subset has constant responses"
            ));
        }
        let fit = fit_binary_design(sub, config, None);
        let mut cat_boundary = Vec::new();
        let vc = components_from_params(&fit.params[1..4], &mut cat_boundary);
        boundary.extend(cat_boundary.into_iter().map(|b| format!("cat{cat}:{b}")));
        intercepts.push(fit.params[0]);
        loglik += fit.loglik;
        converged &= fit.converged;
        evals += fit.evals;
        per_category.push(vc);
        raw_params.push(fit.params);
    }
    Ok(FittedGlrm {
        scale: d.scale().clone(),
        fixed: FixedEffects::CategoryIntercepts(intercepts),
        vc: Components::PerCategory(NominalVarianceComponents { per_category }),
        ranef_modes: None,
        loglik,
        converged,
        n_obs: design.n_obs(),
        boundary_components: boundary,
        warnings,
        outer_evals: evals,
        raw: RawFit::PerCategory { params: raw_params },
    })
}

/// Deterministic response probability for one cell of a binary fit, from the
/// fitted conditional modes. Used by diagnostics and tests.
pub fn fitted_probability(fit: &FittedGlrm, worker: usize, task: usize) -> Option<f64> {
    let modes = fit.ranef_modes.as_ref()?;
    if let FixedEffects::Intercept(b0) = fit.fixed {
        Some(logistic(
            b0 + modes.workers.get(worker)? + modes.tasks.get(task)?,
        ))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, ResponseRecord};

    fn vc(w: f64, t: f64, i: f64) -> VarianceComponents {
        VarianceComponents::new(w, t, i)
    }

    #[test]
    fn spammer_index_examples() {
        assert!((spammer_index(&vc(1.0, 1.0, 1.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(spammer_index(&vc(0.0, 5.0, 2.0)).unwrap(), 0.0);
        assert!((spammer_index(&vc(0.2, 2.8, 0.33)).unwrap() - 0.2 / 3.33).abs() < 1e-12);
        assert!(matches!(
            spammer_index(&vc(0.0, 0.0, 0.0)),
            Err(FitError::AllZeroComponents)
        ));
    }

    #[test]
    fn nominal_spammer_index_examples() {
        let both = NominalVarianceComponents {
            per_category: vec![vc(1.0, 1.0, 1.0), vc(1.0, 1.0, 1.0)],
        };
        assert!((spammer_index_nominal(&both).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let zeros = NominalVarianceComponents {
            per_category: vec![vc(0.0, 1.0, 1.0), vc(0.0, 2.0, 2.0)],
        };
        assert_eq!(spammer_index_nominal(&zeros).unwrap(), 0.0);
        let mixed = NominalVarianceComponents {
            per_category: vec![vc(1.0, 1.0, 0.0), vc(1.0, 0.0, 1.0)],
        };
        assert!((spammer_index_nominal(&mixed).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn icc_fixed_error_examples() {
        // 1 / (3 + pi^2/3)
        let v = icc_fixed_error(&vc(1.0, 1.0, 1.0));
        assert!((v - 0.158_986_2).abs() < 1e-6);
        assert!((v - 0.15903).abs() < 5e-4); // matches the rounded-constant arithmetic
        assert_eq!(icc_fixed_error(&vc(0.0, 1.0, 1.0)), 0.0);
        let pi2 = std::f64::consts::PI.powi(2);
        let v2 = icc_fixed_error(&vc(3.29 * 3.0, 0.0, 0.0));
        assert!((v2 - 9.87 / (9.87 + pi2 / 3.0)).abs() < 1e-3);
        assert!((v2 - 0.75).abs() < 1e-2);
    }

    #[test]
    fn icc_always_below_spammer_index() {
        for (w, t, i) in [(0.5, 1.0, 0.2), (2.0, 0.1, 0.1), (0.01, 3.0, 0.5)] {
            let c = vc(w, t, i);
            assert!(icc_fixed_error(&c) < spammer_index(&c).unwrap());
        }
    }

    fn grid_dataset(responses: &[Vec<usize>], labels: &[&str]) -> Dataset {
        let kind = if labels.len() == 2 {
            crate::data::ScaleKind::Binary
        } else {
            crate::data::ScaleKind::Ordinal
        };
        let scale = ResponseScale::new(
            kind,
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let mut records = Vec::new();
        for (w, row) in responses.iter().enumerate() {
            for (t, &resp) in row.iter().enumerate() {
                records.push(ResponseRecord {
                    worker_id: format!("w{w}"),
                    task_id: format!("t{t}"),
                    response: resp,
                    order: None,
                    duration_seconds: None,
                    truth: None,
                });
            }
        }
        Dataset::from_records(scale, records).unwrap()
    }

    #[test]
    fn identical_workers_collapse_worker_variance() {
        // Every worker answers the same task-dependent pattern.
        let pattern: Vec<usize> = (0..16).map(|t| usize::from(t % 3 != 0)).collect();
        let rows: Vec<Vec<usize>> = (0..10).map(|_| pattern.clone()).collect();
        let d = grid_dataset(&rows, &["no", "yes"]);
        let fit = fit_binary_glrm(&d, &FitConfig::default()).unwrap();
        let vc = fit.variance_components().unwrap();
        assert!(
            vc.sigma2_workers < 1e-3,
            "worker variance {} should collapse",
            vc.sigma2_workers
        );
        assert!(fit.loglik <= 0.0);
    }

    #[test]
    fn wrong_scale_is_rejected() {
        let rows = vec![vec![0, 1], vec![1, 0]];
        let d = grid_dataset(&rows, &["a", "b"]);
        assert!(matches!(
            fit_ordinal_glrm(&d, &FitConfig::default()),
            Err(FitError::WrongScale(_))
        ));
        assert!(matches!(
            fit_nominal_glrm(&d, &FitConfig::default()),
            Err(FitError::WrongScale(_))
        ));
    }

    #[test]
    fn degenerate_ordinal_category_warns_but_fits() {
        // Category "mid" never observed out of 3 declared.
        let rows: Vec<Vec<usize>> = (0..6)
            .map(|w| (0..8).map(|t| usize::from((w + t) % 2 == 0) * 2).collect())
            .collect();
        let d = grid_dataset(&rows, &["lo", "mid", "hi"]);
        let fit = fit_ordinal_glrm(&d, &FitConfig::default()).unwrap();
        assert!(fit
            .warnings
            .iter()
            .any(|w| w.contains("degenerate category")));
        if let FixedEffects::Thresholds(t) = &fit.fixed {
            assert!(t.windows(2).all(|w| w[1] > w[0]));
        } else {
            panic!("expected thresholds");
        }
    }

    #[test]
    fn separation_warning_for_constant_worker() {
        let mut rows: Vec<Vec<usize>> = (0..6)
            .map(|w| (0..8).map(|t| usize::from((w + t) % 2 == 0)).collect())
            .collect();
        rows[0] = vec![1; 8];
        let d = grid_dataset(&rows, &["no", "yes"]);
        let fit = fit_binary_glrm(&d, &FitConfig::default()).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("separation")));
    }

    #[test]
    fn fit_is_deterministic() {
        let rows: Vec<Vec<usize>> = (0..8)
            .map(|w| (0..10).map(|t| usize::from((w * t) % 3 == 1)).collect())
            .collect();
        let d = grid_dataset(&rows, &["no", "yes"]);
        let f1 = fit_binary_glrm(&d, &FitConfig::default()).unwrap();
        let f2 = fit_binary_glrm(&d, &FitConfig::default()).unwrap();
        let (a, b) = (
            f1.variance_components().unwrap(),
            f2.variance_components().unwrap(),
        );
        assert_eq!(a.sigma2_workers.to_bits(), b.sigma2_workers.to_bits());
        assert_eq!(a.sigma2_tasks.to_bits(), b.sigma2_tasks.to_bits());
        assert_eq!(
            a.sigma2_interaction.to_bits(),
            b.sigma2_interaction.to_bits()
        );
        assert_eq!(f1.loglik.to_bits(), f2.loglik.to_bits());
    }
}
