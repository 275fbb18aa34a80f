//! End-to-end detection procedure: consistency gate, behavior matching,
//! deletion analysis, auxiliary filtering, and risk-tiered reporting.
//!
//! The flow follows the evaluation flowchart: fit the model and compute the
//! spammer index; stop early when the workforce looks consistent. Otherwise
//! match every worker's transition matrix against the spammer archetypes
//! (criterion 1), route everyone not confirmed there into deletion analysis
//! (criterion 2), confirm statistical flags with auxiliary time/accuracy
//! evidence, and assemble the union as the final spammer set.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{
    classify_worker, estimate_transition_matrix, score_worker, BehaviorArchetype, ChainError,
    KldScore, MatchStrategy, DEFAULT_KLD_EPS,
};
use crate::data::{
    population_cutoffs, worker_summaries, DataError, Dataset, PopulationCutoffs, ScaleKind,
    WorkerSummary,
};
use crate::deletion::{
    deletion_analysis_with_fit, DeletionConfig, DeletionError, DevianceResult,
};
use crate::glrm::{
    fit_binary_glrm, fit_nominal_glrm, fit_ordinal_glrm, fleiss_kappa, icc_fixed_error,
    Components, FitConfig, FitError, FittedGlrm,
};
use crate::simulate::ThresholdSet;

/// Which cutoff the auxiliary filter compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxRule {
    BelowMean,
    Below1Sd,
}

/// Auxiliary evidence fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxField {
    Time,
    Accuracy,
}

/// Pipeline settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Spammer-index gate; below it the pipeline stops with no spammers.
    pub si_threshold: f64,
    /// Type-I level the cutoffs were calibrated at.
    pub alpha_c1: f64,
    /// Significance level of the deletion chi-squared test.
    pub alpha_c2: f64,
    pub kld_strategy: MatchStrategy,
    pub aux_rule: AuxRule,
    pub aux_fields: Vec<AuxField>,
    pub thresholds: ThresholdSet,
    /// Require both criteria instead of their union.
    pub conjunctive: bool,
    pub fit: FitConfig,
    pub refit_budget: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(thresholds: ThresholdSet) -> Self {
        Self {
            si_threshold: 0.10,
            alpha_c1: 0.05,
            alpha_c2: 0.05,
            kld_strategy: MatchStrategy::AllRowsBelow,
            aux_rule: AuxRule::BelowMean,
            aux_fields: vec![AuxField::Time],
            thresholds,
            conjunctive: false,
            fit: FitConfig::default(),
            refit_budget: 10_000,
            seed: 0,
        }
    }
}

/// Per-worker behavior-matching evidence from criterion 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct C1Match {
    pub worker_id: String,
    pub archetype: BehaviorArchetype,
    pub akld: f64,
    pub mkld: f64,
    /// Matched under the all-rows-below rule.
    pub matched_strict: bool,
    /// Matched under the minimum-KLD rule.
    pub matched_lenient: bool,
    pub passed_aux: bool,
}

/// Inputs to the risk rubric for one worker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerEvidence {
    pub worker_id: String,
    /// Transition matrix qualitatively matches an archetype (lenient rule).
    pub matched_lenient: bool,
    /// Match confirmed under the strict all-rows rule.
    pub matched_strict: bool,
    pub mean_time: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Risk tier labels from the 0/0.5/1 three-dimension rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTier {
    HighRisk,
    ModerateRisk,
    UndeterminedRisk,
}

/// One worker's rubric scores and tier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub worker_id: String,
    pub behavior_score: f64,
    pub time_score: f64,
    pub accuracy_score: f64,
    pub total: f64,
    pub tier: RiskTier,
}

/// Comparator baselines reported next to the spammer index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Baselines {
    pub fleiss_kappa: Option<f64>,
    pub icc_fixed_error: Option<f64>,
}

/// Run provenance embedded in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub threshold_cache_id: String,
    pub kld_strategy: MatchStrategy,
    pub aux_rule: AuxRule,
    pub conjunctive: bool,
    pub fit_converged: bool,
    pub fit_warnings: Vec<String>,
    /// Notes on approximations (nominal one-vs-reference fits, Laplace
    /// deviances, behavior-score operationalization).
    pub notes: Vec<String>,
}

/// Full quality report.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub schema_version: u32,
    pub spammer_index: f64,
    pub estimated_spammer_count: i64,
    pub si_threshold: f64,
    pub gate_stopped: bool,
    pub n_workers: usize,
    pub n_tasks: usize,
    pub n_records: usize,
    pub baselines: Baselines,
    pub fit: FittedGlrm,
    pub c1_matches: Vec<C1Match>,
    pub c2_flags: Vec<DevianceResult>,
    pub kld_scores: Vec<KldScore>,
    pub aux_note: Option<String>,
    pub final_spammers: Vec<String>,
    pub risk: Vec<RiskAssessment>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Deletion(#[from] DeletionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rubric score for an auxiliary value: 0 above the mean, 0.5 below it, 1
/// below one SD under the mean. Missing evidence scores 0.
fn aux_score(value: Option<f64>, mean: Option<f64>, lo: Option<f64>) -> f64 {
    match (value, mean) {
        (Some(v), Some(m)) => {
            if let Some(l) = lo {
                if v < l {
                    return 1.0;
                }
            }
            if v < m {
                0.5
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Apply the 0/0.5/1 rubric to one worker's evidence.
pub fn risk_score(evidence: &WorkerEvidence, cutoffs: &PopulationCutoffs) -> RiskAssessment {
    let behavior_score =
        0.5 * f64::from(evidence.matched_lenient) + 0.5 * f64::from(evidence.matched_strict);
    let time_score = aux_score(
        evidence.mean_time,
        cutoffs.time_mean,
        cutoffs.time_mean_minus_1sd,
    );
    let accuracy_score = aux_score(
        evidence.accuracy,
        cutoffs.acc_mean,
        cutoffs.acc_mean_minus_1sd,
    );
    let total = behavior_score + time_score + accuracy_score;
    let tier = if total >= 2.5 {
        RiskTier::HighRisk
    } else if total >= 1.5 {
        RiskTier::ModerateRisk
    } else {
        RiskTier::UndeterminedRisk
    };
    RiskAssessment {
        worker_id: evidence.worker_id.clone(),
        behavior_score,
        time_score,
        accuracy_score,
        total,
        tier,
    }
}

/// Keep candidates whose auxiliary evidence falls below the rule's cutoff in
/// at least one selected field. Returns the filtered set plus a pass-through
/// flag set when no selected field carries population cutoffs at all.
pub fn apply_auxiliary_filter(
    candidates: &[String],
    summaries: &[WorkerSummary],
    cutoffs: &PopulationCutoffs,
    rule: AuxRule,
    fields: &[AuxField],
) -> (Vec<String>, bool) {
    let cut_for = |f: AuxField| -> Option<f64> {
        match (f, rule) {
            (AuxField::Time, AuxRule::BelowMean) => cutoffs.time_mean,
            (AuxField::Time, AuxRule::Below1Sd) => cutoffs.time_mean_minus_1sd,
            (AuxField::Accuracy, AuxRule::BelowMean) => cutoffs.acc_mean,
            (AuxField::Accuracy, AuxRule::Below1Sd) => cutoffs.acc_mean_minus_1sd,
        }
    };
    let pass_through = fields.iter().all(|&f| cut_for(f).is_none());
    if pass_through {
        return (candidates.to_vec(), true);
    }
    let filtered = candidates
        .iter()
        .filter(|id| {
            summaries
                .iter()
                .find(|s| &s.worker_id == *id)
                .map(|s| {
                    fields.iter().any(|&f| {
                        let value = match f {
                            AuxField::Time => s.mean_duration,
                            AuxField::Accuracy => s.accuracy,
                        };
                        match (value, cut_for(f)) {
                            (Some(v), Some(c)) => v < c,
                            _ => false,
                        }
                    })
                })
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    (filtered, false)
}

fn fit_by_scale(d: &Dataset, config: &FitConfig) -> Result<FittedGlrm, FitError> {
    match d.scale().kind() {
        ScaleKind::Binary => fit_binary_glrm(d, config),
        ScaleKind::Ordinal => fit_ordinal_glrm(d, config),
        ScaleKind::Nominal => fit_nominal_glrm(d, config),
    }
}

/// Run the full detection pipeline.
pub fn run_pipeline(d: &Dataset, cfg: &PipelineConfig) -> Result<QualityReport, PipelineError> {
    let k = d.scale().num_categories();
    if cfg.thresholds.k != k {
        return Err(ChainError::ThresholdMismatch(format!(
            "cutoffs calibrated for k={} but data has k={k}",
            cfg.thresholds.k
        ))
        .into());
    }
    let data_n_tasks = d.mean_tasks_per_worker().round() as usize;

    let fit = fit_by_scale(d, &cfg.fit)?;
    let spammer_index = fit.spammer_index()?;
    let estimated_spammer_count = (spammer_index * d.n_workers() as f64).round() as i64;

    let baselines = Baselines {
        fleiss_kappa: fleiss_kappa(d, cfg.seed).ok(),
        icc_fixed_error: match &fit.vc {
            Components::Single(vc) => Some(icc_fixed_error(vc)),
            Components::PerCategory(_) => None,
        },
    };

    let summaries = worker_summaries(d);
    let cutoffs = population_cutoffs(&summaries).unwrap_or(PopulationCutoffs {
        time_mean: None,
        time_mean_minus_1sd: None,
        acc_mean: None,
        acc_mean_minus_1sd: None,
    });

    let mut notes = vec![
        "behavior score: 0.5 for a minimum-KLD match plus 0.5 for an all-rows match".into(),
        "deviances use Laplace-approximated marginal log-likelihoods".into(),
    ];
    if matches!(fit.vc, Components::PerCategory(_)) {
        notes.push("nominal components from one-vs-reference binary fits".into());
    }

    let provenance = |fit: &FittedGlrm, notes: Vec<String>| Provenance {
        seed: cfg.seed,
        threshold_cache_id: cfg.thresholds.cache_id(),
        kld_strategy: cfg.kld_strategy,
        aux_rule: cfg.aux_rule,
        conjunctive: cfg.conjunctive,
        fit_converged: fit.converged,
        fit_warnings: fit.warnings.clone(),
        notes,
    };

    if spammer_index < cfg.si_threshold {
        let prov = provenance(&fit, notes);
        return Ok(QualityReport {
            schema_version: 1,
            spammer_index,
            estimated_spammer_count,
            si_threshold: cfg.si_threshold,
            gate_stopped: true,
            n_workers: d.n_workers(),
            n_tasks: d.n_tasks(),
            n_records: d.records().len(),
            baselines,
            fit,
            c1_matches: Vec::new(),
            c2_flags: Vec::new(),
            kld_scores: Vec::new(),
            aux_note: None,
            final_spammers: Vec::new(),
            risk: Vec::new(),
            provenance: prov,
        });
    }

    // Criterion 1: archetype matching on transition matrices.
    let mut kld_scores = Vec::with_capacity(d.n_workers() * 3);
    let mut c1_matches = Vec::new();
    let mut matched_lenient = BTreeSet::new();
    let mut matched_strict = BTreeSet::new();
    let mut c1_matched_ids = Vec::new();
    for id in d.worker_ids() {
        let seq = d.response_sequence(id)?;
        let obs = estimate_transition_matrix(&seq, k, 0.0)?;
        let mode = modal(&seq, k);
        let scores = [
            score_worker(id, &obs, BehaviorArchetype::PrimaryChoice(mode), DEFAULT_KLD_EPS)?,
            score_worker(id, &obs, BehaviorArchetype::RepeatedPattern, DEFAULT_KLD_EPS)?,
            score_worker(id, &obs, BehaviorArchetype::RandomGuessing, DEFAULT_KLD_EPS)?,
        ];
        let strict = classify_worker(
            &scores,
            &cfg.thresholds,
            MatchStrategy::AllRowsBelow,
            data_n_tasks,
        )?;
        let lenient = classify_worker(
            &scores,
            &cfg.thresholds,
            MatchStrategy::MinKldBelow,
            data_n_tasks,
        )?;
        if strict.is_some() {
            matched_strict.insert(id.clone());
        }
        if lenient.is_some() {
            matched_lenient.insert(id.clone());
        }
        let active = match cfg.kld_strategy {
            MatchStrategy::AllRowsBelow => strict,
            MatchStrategy::MinKldBelow => lenient,
        };
        if let Some(archetype) = active {
            let s = scores
                .iter()
                .find(|s| s.archetype == archetype)
                .expect("archetype comes from these scores");
            c1_matches.push(C1Match {
                worker_id: id.clone(),
                archetype,
                akld: s.akld,
                mkld: s.mkld,
                matched_strict: strict.is_some(),
                matched_lenient: lenient.is_some(),
                passed_aux: false, // filled below
            });
            c1_matched_ids.push(id.clone());
        }
        kld_scores.extend(scores);
    }

    let (c1_spammers, aux_pass_through) = apply_auxiliary_filter(
        &c1_matched_ids,
        &summaries,
        &cutoffs,
        cfg.aux_rule,
        &cfg.aux_fields,
    );
    let c1_set: BTreeSet<String> = c1_spammers.iter().cloned().collect();
    for m in c1_matches.iter_mut() {
        m.passed_aux = c1_set.contains(&m.worker_id);
    }
    let aux_note = aux_pass_through.then(|| {
        "no auxiliary evidence: selected fields carry no population cutoffs; filters pass through"
            .to_string()
    });

    // Criterion 2: deletion analysis on whoever criterion 1 did not confirm
    // (or, in conjunctive mode, on the criterion-1 spammers themselves).
    let c2_candidates: Vec<String> = if cfg.conjunctive {
        c1_spammers.clone()
    } else {
        d.worker_ids()
            .iter()
            .filter(|id| !c1_set.contains(*id))
            .cloned()
            .collect()
    };
    let deletion_cfg = DeletionConfig {
        alpha: cfg.alpha_c2,
        fit: cfg.fit,
        refit_budget: cfg.refit_budget,
    };
    let c2_report = deletion_analysis_with_fit(d, &fit, &deletion_cfg, &c2_candidates)?;
    let c2_flagged_ids: Vec<String> = c2_report
        .results
        .iter()
        .filter(|r| r.flagged && r.refit_converged)
        .map(|r| r.worker_id.clone())
        .collect();
    let (c2_spammers, _) = apply_auxiliary_filter(
        &c2_flagged_ids,
        &summaries,
        &cutoffs,
        cfg.aux_rule,
        &cfg.aux_fields,
    );

    let final_spammers: Vec<String> = if cfg.conjunctive {
        c2_spammers
    } else {
        let mut set: BTreeSet<String> = c1_set.iter().cloned().collect();
        set.extend(c2_spammers);
        d.worker_ids()
            .iter()
            .filter(|id| set.contains(*id))
            .cloned()
            .collect()
    };

    // Risk tiers over every worker with any statistical evidence.
    let c2_flag_set: BTreeSet<&String> = c2_flagged_ids.iter().collect();
    let mut risk = Vec::new();
    for id in d.worker_ids() {
        let has_evidence = matched_lenient.contains(id)
            || matched_strict.contains(id)
            || c2_flag_set.contains(id);
        if !has_evidence {
            continue;
        }
        let summary = summaries.iter().find(|s| &s.worker_id == id);
        let evidence = WorkerEvidence {
            worker_id: id.clone(),
            matched_lenient: matched_lenient.contains(id),
            matched_strict: matched_strict.contains(id),
            mean_time: summary.and_then(|s| s.mean_duration),
            accuracy: summary.and_then(|s| s.accuracy),
        };
        risk.push(risk_score(&evidence, &cutoffs));
    }

    let prov = provenance(&fit, notes);
    Ok(QualityReport {
        schema_version: 1,
        spammer_index,
        estimated_spammer_count,
        si_threshold: cfg.si_threshold,
        gate_stopped: false,
        n_workers: d.n_workers(),
        n_tasks: d.n_tasks(),
        n_records: d.records().len(),
        baselines,
        fit,
        c1_matches,
        c2_flags: c2_report.results,
        kld_scores,
        aux_note,
        final_spammers,
        risk,
        provenance: prov,
    })
}

fn modal(seq: &[usize], k: usize) -> usize {
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

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
