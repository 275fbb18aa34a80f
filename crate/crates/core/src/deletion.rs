//! Leave-one-worker-out deviance-distance analysis.
//!
//! For each worker the model is refit on the data without that worker's
//! records and the deviance distance `-2 * (loglik_full - loglik_reduced)` is
//! tested against a chi-squared distribution whose degrees of freedom equal
//! the worker's record count. Influential workers, whose responses the shared
//! model explains poorly, produce large distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::data::{DataError, Dataset, ScaleKind};
use crate::glrm::laplace::CrossedDesign;
use crate::glrm::{
    self, design_from_dataset, fit_binary_glrm, fit_nominal_glrm, fit_ordinal_glrm, FitConfig,
    FitError, FittedGlrm,
};
use crate::simulate::ks_distance_to_cdf;

/// One worker's deviance-distance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevianceResult {
    pub worker_id: String,
    pub deviance: f64,
    /// Degrees of freedom: the worker's deleted-record count.
    pub df: usize,
    pub p_value: f64,
    /// Upper chi-squared quantile the deviance is compared against.
    pub critical: f64,
    pub flagged: bool,
    /// False when the reduced refit exhausted its budget; such results are
    /// reported but excluded from detection decisions.
    pub refit_converged: bool,
}

/// Settings for the deletion pass.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DeletionConfig {
    pub alpha: f64,
    pub fit: FitConfig,
    /// Outer evaluation budget for each warm-started refit.
    pub refit_budget: usize,
}

impl Default for DeletionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            fit: FitConfig::default(),
            refit_budget: 10_000,
        }
    }
}

/// Full deletion pass output.
#[derive(Debug, Clone, Serialize)]
pub struct DeletionReport {
    pub results: Vec<DevianceResult>,
    pub full_loglik: f64,
    /// KS distance between the deviance sample (largest common-df group) and
    /// the chi-squared distribution with that df.
    pub ks_distance_chi2: Option<f64>,
}

#[derive(Debug, Error)]
pub enum DeletionError {
    #[error("worker {0:?} not present in dataset")]
    WorkerNotFound(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Upper-tail chi-squared quantile: the value with tail probability `alpha`.
pub fn chi_squared_upper_quantile(alpha: f64, df: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
    assert!(df >= 1, "df must be positive");
    ChiSquared::new(df as f64)
        .expect("valid df")
        .inverse_cdf(1.0 - alpha)
}

fn chi_squared_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("valid df").sf(x)
}

/// Reduced design with one worker removed and worker indices compacted.
/// Returns the design and the kept observation ids (into the full design).
fn reduced_design(design: &CrossedDesign, drop_worker: u32) -> (CrossedDesign, Vec<usize>) {
    let mut kept = Vec::with_capacity(design.n_obs());
    let mut worker_idx = Vec::with_capacity(design.n_obs());
    let mut task_idx = Vec::with_capacity(design.n_obs());
    let mut response = Vec::with_capacity(design.n_obs());
    for i in 0..design.n_obs() {
        let wi = design.worker_idx[i];
        if wi == drop_worker {
            continue;
        }
        kept.push(i);
        worker_idx.push(if wi > drop_worker { wi - 1 } else { wi });
        task_idx.push(design.task_idx[i]);
        response.push(design.response[i]);
    }
    (
        CrossedDesign {
            n_workers: design.n_workers - 1,
            n_tasks: design.n_tasks,
            worker_idx,
            task_idx,
            response,
        },
        kept,
    )
}

/// Map a full-design mode vector onto the reduced layout.
fn reduced_z(full_z: &[f64], design: &CrossedDesign, drop_worker: u32, kept: &[usize]) -> Vec<f64> {
    let (nw, nt) = (design.n_workers, design.n_tasks);
    let mut z = Vec::with_capacity(nw - 1 + nt + kept.len());
    for (w, &v) in full_z[..nw].iter().enumerate() {
        if w as u32 != drop_worker {
            z.push(v);
        }
    }
    z.extend_from_slice(&full_z[nw..nw + nt]);
    for &i in kept {
        z.push(full_z[nw + nt + i]);
    }
    z
}

fn reduced_loglik(
    d: &Dataset,
    full_fit: &FittedGlrm,
    design: &CrossedDesign,
    drop_worker: u32,
    config: &DeletionConfig,
) -> (f64, bool) {
    let (reduced, kept) = reduced_design(design, drop_worker);
    let mut warm_cfg = config.fit;
    warm_cfg.max_outer_evals = config.refit_budget;
    let k = d.scale().num_categories();

    let run = |cfg: &FitConfig, warm: Option<glrm::WarmStart<'_>>| -> (f64, bool) {
        match (&full_fit.raw, d.scale().kind()) {
            (glrm::RawFit::Single { .. }, ScaleKind::Binary) => {
                let fit = glrm::fit_binary_design(&reduced, cfg, warm);
                (fit.loglik, fit.converged)
            }
            (glrm::RawFit::Single { .. }, ScaleKind::Ordinal) => {
                let fit = glrm::fit_ordinal_design(&reduced, k, cfg, warm);
                (fit.loglik, fit.converged)
            }
            (glrm::RawFit::PerCategory { params }, _) => {
                let subsets = glrm::nominal_subset_designs(&reduced, k);
                let mut total = 0.0;
                let mut conv = true;
                for (sub, cat_params) in subsets.iter().zip(params) {
                    let fit = glrm::fit_binary_design(
                        sub,
                        cfg,
                        Some(glrm::WarmStart {
                            params: cat_params,
                            z: vec![0.0; sub.dim()],
                        }),
                    );
                    total += fit.loglik;
                    conv &= fit.converged;
                }
                (total, conv)
            }
            _ => unreachable!("fit kind matches dataset scale"),
        }
    };

    let warm = match &full_fit.raw {
        glrm::RawFit::Single { params, z } => Some(glrm::WarmStart {
            params,
            z: reduced_z(z, design, drop_worker, &kept),
        }),
        glrm::RawFit::PerCategory { .. } => None, // per-category warm handled inside
    };
    let (ll, converged) = run(&warm_cfg, warm);
    if converged {
        return (ll, true);
    }
    // One cold restart with a larger budget.
    let mut cold_cfg = config.fit;
    cold_cfg.max_outer_evals = (config.refit_budget * 10).min(config.fit.max_outer_evals);
    let (ll_cold, conv_cold) = run(&cold_cfg, None);
    if ll_cold > ll {
        (ll_cold, conv_cold)
    } else {
        (ll, conv_cold)
    }
}

fn result_for_worker(
    d: &Dataset,
    full_fit: &FittedGlrm,
    design: &CrossedDesign,
    worker_dense: u32,
    config: &DeletionConfig,
) -> DevianceResult {
    let worker_id = d.worker_ids()[worker_dense as usize].clone();
    let df = design
        .worker_idx
        .iter()
        .filter(|&&w| w == worker_dense)
        .count();
    let (loglik_reduced, refit_converged) =
        reduced_loglik(d, full_fit, design, worker_dense, config);
    let deviance = -2.0 * (full_fit.loglik - loglik_reduced);
    let critical = chi_squared_upper_quantile(config.alpha, df);
    let p_value = chi_squared_sf(deviance, df);
    DevianceResult {
        worker_id,
        deviance,
        df,
        p_value,
        critical,
        flagged: p_value < config.alpha,
        refit_converged,
    }
}

fn fit_full(d: &Dataset, config: &DeletionConfig) -> Result<FittedGlrm, DeletionError> {
    let fit = match d.scale().kind() {
        ScaleKind::Binary => fit_binary_glrm(d, &config.fit)?,
        ScaleKind::Ordinal => fit_ordinal_glrm(d, &config.fit)?,
        ScaleKind::Nominal => fit_nominal_glrm(d, &config.fit)?,
    };
    Ok(fit)
}

/// Deviance distance of a single worker against a shared full fit.
pub fn deviance_distance(
    d: &Dataset,
    full_fit: &FittedGlrm,
    worker_id: &str,
    config: &DeletionConfig,
) -> Result<DevianceResult, DeletionError> {
    let &dense = d
        .worker_index()
        .get(worker_id)
        .ok_or_else(|| DeletionError::WorkerNotFound(worker_id.to_string()))?;
    let design = design_from_dataset(d);
    Ok(result_for_worker(
        d,
        full_fit,
        &design,
        dense as u32,
        config,
    ))
}

/// Leave-one-out analysis over every worker, refits running in parallel.
pub fn deletion_analysis(d: &Dataset, config: &DeletionConfig) -> Result<DeletionReport, DeletionError> {
    let all: Vec<String> = d.worker_ids().to_vec();
    deletion_analysis_for(d, config, &all)
}

/// Leave-one-out analysis restricted to the given workers.
pub fn deletion_analysis_for(
    d: &Dataset,
    config: &DeletionConfig,
    workers: &[String],
) -> Result<DeletionReport, DeletionError> {
    let full_fit = fit_full(d, config)?;
    deletion_analysis_with_fit(d, &full_fit, config, workers)
}

/// Same as [`deletion_analysis_for`], reusing an existing full fit.
pub fn deletion_analysis_with_fit(
    d: &Dataset,
    full_fit: &FittedGlrm,
    config: &DeletionConfig,
    workers: &[String],
) -> Result<DeletionReport, DeletionError> {
    let design = design_from_dataset(d);
    let mut dense_ids = Vec::with_capacity(workers.len());
    for w in workers {
        let &dense = d
            .worker_index()
            .get(w)
            .ok_or_else(|| DeletionError::WorkerNotFound(w.clone()))?;
        dense_ids.push(dense as u32);
    }
    dense_ids.sort_unstable();
    let results: Vec<DevianceResult> = dense_ids
        .par_iter()
        .map(|&dense| result_for_worker(d, full_fit, &design, dense, config))
        .collect();

    let ks_distance_chi2 = ks_diagnostic(&results);
    Ok(DeletionReport {
        results,
        full_loglik: full_fit.loglik,
        ks_distance_chi2,
    })
}

/// KS distance of the largest same-df deviance group against chi-squared(df).
fn ks_diagnostic(results: &[DevianceResult]) -> Option<f64> {
    use std::collections::HashMap;
    let mut groups: HashMap<usize, Vec<f64>> = HashMap::new();
    for r in results.iter().filter(|r| r.refit_converged) {
        groups.entry(r.df).or_default().push(r.deviance.max(0.0));
    }
    let (df, sample) = groups
        .into_iter()
        .max_by_key(|(df, v)| (v.len(), *df))?;
    if sample.len() < 5 {
        return None;
    }
    let chi = ChiSquared::new(df as f64).ok()?;
    Some(ks_distance_to_cdf(&sample, |x| chi.cdf(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, ResponseRecord, ResponseScale};

    #[test]
    fn chi_squared_quantiles_match_reference_values() {
        assert!((chi_squared_upper_quantile(0.05, 1) - 3.8415).abs() < 1e-3);
        assert!((chi_squared_upper_quantile(0.05, 80) - 101.8795).abs() < 1e-3);
        // Median of chi-squared(2) is 2 ln 2.
        assert!((chi_squared_upper_quantile(0.5, 2) - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn chi_squared_quantile_monotonicity() {
        for df in [1usize, 5, 20, 80] {
            assert!(chi_squared_upper_quantile(0.05, df) < chi_squared_upper_quantile(0.05, df + 1));
        }
        for alpha in [0.01, 0.05, 0.2] {
            assert!(
                chi_squared_upper_quantile(alpha, 10) > chi_squared_upper_quantile(alpha + 0.1, 10)
            );
        }
    }

    /// Independent oracle: invert the chi-squared CDF by bisection on the
    /// regularized incomplete gamma computed by series expansion.
    fn chi2_quantile_bisect(alpha: f64, df: usize) -> f64 {
        fn lower_gamma_series(a: f64, x: f64) -> f64 {
            // Regularized P(a, x) via its power series.
            if x <= 0.0 {
                return 0.0;
            }
            let ln_gamma = statrs::function::gamma::ln_gamma(a);
            let mut sum = 1.0 / a;
            let mut term = sum;
            for n in 1..20_000 {
                term *= x / (a + n as f64);
                sum += term;
                if term.abs() < 1e-16 * sum.abs() {
                    break;
                }
            }
            (sum.ln() + a * x.ln() - x - ln_gamma).exp()
        }
        let target = 1.0 - alpha;
        let (mut lo, mut hi) = (0.0f64, 20.0 * df as f64 + 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lower_gamma_series(df as f64 / 2.0, mid / 2.0) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantiles_match_bisection_oracle() {
        for (alpha, df) in [(0.05, 1), (0.05, 80), (0.5, 2), (0.01, 40)] {
            let got = chi_squared_upper_quantile(alpha, df);
            let want = chi2_quantile_bisect(alpha, df);
            assert!(
                (got - want).abs() < 1e-3,
                "alpha={alpha} df={df}: {got} vs {want}"
            );
        }
    }

    fn exchangeable_dataset() -> Dataset {
        // Identical workers answering a fixed task pattern.
        let scale = ResponseScale::binary("0", "1").unwrap();
        let mut records = Vec::new();
        for w in 0..8 {
            for t in 0..12 {
                records.push(ResponseRecord {
                    worker_id: format!("w{w}"),
                    task_id: format!("t{t}"),
                    response: usize::from(t % 3 == 0),
                    order: None,
                    duration_seconds: None,
                    truth: None,
                });
            }
        }
        Dataset::from_records(scale, records).unwrap()
    }

    #[test]
    fn identical_workers_are_never_flagged() {
        let d = exchangeable_dataset();
        let report = deletion_analysis(&d, &DeletionConfig::default()).unwrap();
        assert_eq!(report.results.len(), 8);
        for r in &report.results {
            assert!(!r.flagged, "worker {} flagged with D={}", r.worker_id, r.deviance);
            assert!(r.deviance >= -1e-6);
            assert_eq!(r.df, 12);
        }
    }

    #[test]
    fn unknown_worker_is_an_error() {
        let d = exchangeable_dataset();
        let config = DeletionConfig::default();
        let fit = fit_full(&d, &config).unwrap();
        assert!(matches!(
            deviance_distance(&d, &fit, "nope", &config),
            Err(DeletionError::WorkerNotFound(_))
        ));
    }

    #[test]
    fn subset_analysis_matches_full_analysis() {
        let d = exchangeable_dataset();
        let config = DeletionConfig::default();
        let full = deletion_analysis(&d, &config).unwrap();
        let sub =
            deletion_analysis_for(&d, &config, &["w3".to_string(), "w5".to_string()]).unwrap();
        let find = |id: &str, rs: &[DevianceResult]| {
            rs.iter().find(|r| r.worker_id == id).unwrap().deviance
        };
        assert!((find("w3", &full.results) - find("w3", &sub.results)).abs() < 1e-9);
        assert!((find("w5", &full.results) - find("w5", &sub.results)).abs() < 1e-9);
    }
}
