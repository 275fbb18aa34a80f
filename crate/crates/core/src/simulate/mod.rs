//! Synthetic data generation and empirical threshold calibration.
//!
//! Credible workers are drawn from the same crossed random-effects model the
//! fits assume; spammers are generated behaviorally. KLD cutoffs are
//! calibrated by large-scale simulation: the cutoff for an archetype is the
//! lower alpha-quantile of the credible aKLD distribution against that
//! archetype's target, and the type II error is the fraction of simulated
//! spammers the cutoff misses.

mod generators;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generators::{
    simulate_contaminated, simulate_from_model, simulate_multiclass, simulate_spammer_sequence,
    CredibleSim, REPEATED_PATTERN_SWITCH,
};

use crate::chains::{
    estimate_transition_matrix, score_worker, BehaviorArchetype, ChainError, DEFAULT_KLD_EPS,
};
use crate::data::{DataError, Dataset, ResponseScale};
use crate::glrm::{fit_binary_glrm, FitConfig, FitError, VarianceComponents};
use crate::numeric::{derive_seed, logistic};

const TAG_CAL_CREDIBLE: u64 = 0x6363_7265;
const TAG_CAL_SPAMMER: u64 = 0x6373_7061;

/// Default credible-worker variance components for spammer-index simulation
/// studies (before accuracy calibration rescales the task effects).
pub const DEFAULT_SI_VC: VarianceComponents = VarianceComponents {
    sigma2_workers: 0.04,
    sigma2_tasks: 4.0,
    sigma2_interaction: 0.04,
};

/// Simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Total number of workers, including any substituted spammers.
    pub n_workers: usize,
    pub n_tasks: usize,
    pub scale: ResponseScale,
    /// Credible-generator variance components.
    pub vc: VarianceComponents,
    pub spammer_mix: Vec<(BehaviorArchetype, usize)>,
    pub seed: u64,
    /// Target band for realized per-worker accuracy of credible workers.
    pub accuracy_band: (f64, f64),
}

impl SimConfig {
    /// Binary config with the default credible generator and no spammers.
    pub fn binary(n_workers: usize, n_tasks: usize, seed: u64) -> Self {
        Self {
            n_workers,
            n_tasks,
            scale: ResponseScale::binary("0", "1").expect("static labels"),
            vc: DEFAULT_SI_VC,
            spammer_mix: Vec::new(),
            seed,
            accuracy_band: (0.75, 0.9),
        }
    }
}

/// Behavioral model of a credible worker used for cutoff calibration.
///
/// The exact settings trade off how strongly credible workers lean toward one
/// answer (worker SD) against task-driven variation; they are chosen so the
/// calibrated cutoffs reproduce the published type II error profile.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CredibleModel {
    pub sigma_workers: f64,
    pub sigma_tasks: f64,
    pub sigma_interaction: f64,
}

impl Default for CredibleModel {
    fn default() -> Self {
        Self {
            sigma_workers: 1.1,
            sigma_tasks: 2.0,
            sigma_interaction: 0.2,
        }
    }
}

impl CredibleModel {
    /// One credible response sequence over `n_tasks` fresh tasks.
    pub fn sequence(&self, k: usize, n_tasks: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let zw: f64 = StandardNormal.sample(&mut rng);
        let w = zw * self.sigma_workers;
        let cuts = if k > 2 {
            generators::default_cutpoints(k)
        } else {
            Vec::new()
        };
        (0..n_tasks)
            .map(|_| {
                let zt: f64 = StandardNormal.sample(&mut rng);
                let zi: f64 = StandardNormal.sample(&mut rng);
                let s = w + zt * self.sigma_tasks + zi * self.sigma_interaction;
                if k == 2 {
                    usize::from(rng.random::<f64>() < logistic(s))
                } else {
                    let u: f64 = rng.random();
                    let latent = s + (u / (1.0 - u)).ln();
                    cuts.iter().filter(|&&c| latent > c).count()
                }
            })
            .collect()
    }
}

/// Simulation-calibrated KLD cutoffs with their calibration context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub beta_pc: f64,
    pub beta_rp: f64,
    pub beta_rg: f64,
    pub alpha: f64,
    pub n_sims: usize,
    pub n_tasks: usize,
    pub k: usize,
    pub type2_pc: f64,
    pub type2_rp: f64,
    pub type2_rg: f64,
    pub seed: u64,
    /// Logarithm base used for the divergences ("natural").
    pub log_base: String,
    /// Set when the replicate count is too small for stable quantiles.
    pub low_precision: bool,
}

impl ThresholdSet {
    pub fn beta_for(&self, a: BehaviorArchetype) -> f64 {
        match a {
            BehaviorArchetype::PrimaryChoice(_) => self.beta_pc,
            BehaviorArchetype::RepeatedPattern => self.beta_rp,
            BehaviorArchetype::RandomGuessing => self.beta_rg,
        }
    }

    /// Stable identifier for cache files and report provenance.
    pub fn cache_id(&self) -> String {
        format!(
            "t{}-k{}-a{}-n{}-seed{}",
            self.n_tasks, self.k, self.alpha, self.n_sims, self.seed
        )
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("calibration failure: {0}")]
    CalibrationFailure(String),
    #[error("wrong scale: {0}")]
    WrongScale(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Expected longest same-response run in a length-`n` Bernoulli(p) sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongestRun {
    /// Expected longest-run length `log_{1/p}(n(1-p))`.
    pub r: f64,
    /// Standard deviation of the longest-run length (p = 0.5 form).
    pub sd: f64,
    /// Run length covering roughly two standard deviations above the mean;
    /// used to synthesize primary-choice behavior.
    pub threshold: usize,
}

/// Longest-run arithmetic for primary-choice synthesis.
pub fn expected_longest_run(n: usize, p: f64) -> LongestRun {
    assert!(n >= 2, "need n >= 2");
    assert!(p > 0.0 && p < 1.0, "need 0 < p < 1");
    let r = (n as f64 * (1.0 - p)).ln() / (1.0 / p).ln();
    let ln2 = std::f64::consts::LN_2;
    let sd = (std::f64::consts::PI.powi(2) / (6.0 * ln2 * ln2) + 1.0 / 12.0).sqrt();
    let threshold = (r.ceil().max(0.0) + (2.0 * sd).ceil()) as usize;
    LongestRun { r, sd, threshold }
}

/// Simulate credible workers per the configured generator, calibrating the
/// task-effect scale to the accuracy band.
pub fn simulate_credible(config: &SimConfig) -> Result<Dataset, SimError> {
    Ok(generators::simulate_credible_detailed(config)?.dataset)
}

/// Detailed variant exposing the realized calibration.
pub fn simulate_credible_detailed(config: &SimConfig) -> Result<CredibleSim, SimError> {
    generators::simulate_credible_detailed(config)
}

fn modal_category(seq: &[usize], k: usize) -> usize {
    let mut counts = vec![0usize; k];
    for &v in seq {
        counts[v] += 1;
    }
    counts
        .iter()
        .enumerate()
        .max_by_key(|(i, &c)| (c, k - i))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn akld_of_sequence(seq: &[usize], k: usize, archetype: BehaviorArchetype) -> f64 {
    let obs = estimate_transition_matrix(seq, k, 0.0).expect("simulated sequences are long");
    let instantiated = match archetype {
        BehaviorArchetype::PrimaryChoice(_) => {
            BehaviorArchetype::PrimaryChoice(modal_category(seq, k))
        }
        other => other,
    };
    score_worker("sim", &obs, instantiated, DEFAULT_KLD_EPS)
        .expect("dimensions agree")
        .akld
}

/// Credible and spammer aKLD samples against one archetype target.
///
/// Primary-choice targets are instantiated at each sequence's modal category,
/// matching how workers are scored in detection.
pub fn calibration_akld_samples(
    n_tasks: usize,
    k: usize,
    n_sims: usize,
    seed: u64,
    archetype: BehaviorArchetype,
    model: &CredibleModel,
) -> (Vec<f64>, Vec<f64>) {
    let arch_tag = match archetype {
        BehaviorArchetype::PrimaryChoice(_) => 1u64,
        BehaviorArchetype::RepeatedPattern => 2,
        BehaviorArchetype::RandomGuessing => 3,
    };
    let credible: Vec<f64> = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let s = model.sequence(k, n_tasks, derive_seed(seed, TAG_CAL_CREDIBLE, i as u64));
            akld_of_sequence(&s, k, archetype)
        })
        .collect();
    let spammers: Vec<f64> = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let rep_seed = derive_seed(seed, TAG_CAL_SPAMMER ^ arch_tag, i as u64);
            let concrete = match archetype {
                BehaviorArchetype::PrimaryChoice(_) => {
                    let mut rng = ChaCha12Rng::seed_from_u64(rep_seed ^ 0x5150);
                    BehaviorArchetype::PrimaryChoice(rng.random_range(0..k))
                }
                other => other,
            };
            let s = simulate_spammer_sequence(concrete, k, n_tasks, rep_seed);
            akld_of_sequence(&s, k, archetype)
        })
        .collect();
    (credible, spammers)
}

/// Linear-interpolation empirical quantile (sorted input not required).
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Calibrate per-archetype aKLD cutoffs at the given type-I level.
pub fn calibrate_thresholds(
    n_tasks: usize,
    k: usize,
    alpha: f64,
    n_sims: usize,
    seed: u64,
) -> ThresholdSet {
    let model = CredibleModel::default();
    let mut betas = [0.0f64; 3];
    let mut type2 = [0.0f64; 3];
    let archetypes = [
        BehaviorArchetype::PrimaryChoice(0),
        BehaviorArchetype::RepeatedPattern,
        BehaviorArchetype::RandomGuessing,
    ];
    for (slot, &a) in archetypes.iter().enumerate() {
        let (credible, spam) = calibration_akld_samples(n_tasks, k, n_sims, seed, a, &model);
        let beta = quantile(&credible, alpha);
        betas[slot] = beta;
        type2[slot] = spam.iter().filter(|&&v| v >= beta).count() as f64 / spam.len() as f64;
    }
    ThresholdSet {
        beta_pc: betas[0],
        beta_rp: betas[1],
        beta_rg: betas[2],
        alpha,
        n_sims,
        n_tasks,
        k,
        type2_pc: type2[0],
        type2_rp: type2[1],
        type2_rg: type2[2],
        seed,
        log_base: "natural".into(),
        low_precision: n_sims < 10_000,
    }
}

/// Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.
pub fn ks_test(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert!(x.len() >= 2 && y.len() >= 2, "need at least 2 points per sample");
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let xv = xs[i];
        let yv = ys[j];
        let v = xv.min(yv);
        while i < n1 && xs[i] <= v {
            i += 1;
        }
        while j < n2 && ys[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_tail(lambda))
}

/// One-sample KS distance of data against a reference CDF.
pub fn ks_distance_to_cdf<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i as f64 + 1.0) / n - f).abs());
    }
    d
}

fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Contaminate a fixed credible base at several spammer fractions and record
/// the fitted spammer index per fraction.
pub fn sensitivity_sweep(
    base: &SimConfig,
    archetype: BehaviorArchetype,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>, SimError> {
    if fractions.iter().any(|&f| !(0.0..1.0).contains(&f)) {
        return Err(SimError::CalibrationFailure(
            "fractions must lie in [0, 1)".into(),
        ));
    }
    fractions
        .par_iter()
        .map(|&f| {
            let mut config = base.clone();
            let count = (f * base.n_workers as f64).round() as usize;
            config.spammer_mix = vec![(archetype, count)];
            let data = simulate_contaminated(&config)?;
            let fit = fit_binary_glrm(&data, &FitConfig::default())?;
            let si = fit.spammer_index()?;
            Ok((f, si))
        })
        .collect()
}
