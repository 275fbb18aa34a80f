//! Consistency and credibility metrics for crowdsourced annotation data.
//!
//! The library measures overall data quality of a worker-by-task response
//! table through variance decomposition of a crossed random-effects model
//! (the spammer index), classifies per-worker response behavior against
//! canonical spammer archetypes via KL divergence on Markov transition
//! matrices, flags influential workers with leave-one-worker-out deviance
//! distances, and combines all evidence into a risk-tiered report.
//!
//! Modules:
//! - [`data`]: dataset model, CSV ingestion/validation, descriptive summaries
//! - [`glrm`]: crossed random-effects model fits and consistency metrics
//! - [`chains`]: transition-matrix estimation and KLD behavior scoring
//! - [`simulate`]: synthetic data generators and threshold calibration
//! - [`deletion`]: deviance-distance deletion analysis
//! - [`pipeline`]: end-to-end detection procedure and quality report

pub mod chains;
pub mod data;
pub mod deletion;
pub mod glrm;
pub mod pipeline;
pub mod simulate;

mod numeric;

pub use chains::{
    classify_worker, estimate_transition_matrix, kld_row, score_worker, target_matrix,
    BehaviorArchetype, ChainError, KldScore, MatchStrategy, TransitionMatrix, DEFAULT_KLD_EPS,
};
pub use data::{
    parse_dataset, parse_dataset_reader, population_cutoffs, worker_summaries, DataError, Dataset,
    ParseOptions, PopulationCutoffs, ResponseRecord, ResponseScale, ScaleKind, WorkerSummary,
};
pub use deletion::{
    chi_squared_upper_quantile, deletion_analysis, deletion_analysis_for,
    deletion_analysis_with_fit, deviance_distance, DeletionConfig, DeletionError, DeletionReport,
    DevianceResult,
};
pub use glrm::{
    fit_binary_glrm, fit_nominal_glrm, fit_ordinal_glrm, fleiss_kappa, icc_fixed_error,
    spammer_index, spammer_index_nominal, Components, FitConfig, FitError, FittedGlrm,
    FixedEffects, NominalVarianceComponents, RanefModes, VarianceComponents,
};
pub use numeric::fmt_sig9;
pub use pipeline::{
    apply_auxiliary_filter, risk_score, run_pipeline, write_atomic, AuxField, AuxRule, Baselines,
    C1Match, PipelineConfig, PipelineError, QualityReport, RiskAssessment, RiskTier,
    WorkerEvidence,
};
pub use simulate::{
    calibrate_thresholds, calibration_akld_samples, expected_longest_run, ks_distance_to_cdf,
    ks_test, sensitivity_sweep, simulate_contaminated, simulate_credible,
    simulate_credible_detailed, simulate_from_model, simulate_multiclass,
    simulate_spammer_sequence, CredibleModel, CredibleSim, LongestRun, SimConfig, SimError,
    ThresholdSet, DEFAULT_SI_VC,
};
