//! Per-worker Markov transition matrices and KLD-based behavior scoring.
//!
//! A worker's ordered response sequence is summarized by a row-stochastic
//! transition matrix. Each row is compared, via KL divergence, to the
//! corresponding row of a canonical spammer target matrix; the average and
//! minimum row divergences (aKLD / mKLD) feed threshold classification
//! against simulation-calibrated cutoffs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::ThresholdSet;

/// Canonical spamming-behavior archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorArchetype {
    /// Always drifts back to one preferred category.
    PrimaryChoice(usize),
    /// Switches away from the current category nearly every step.
    RepeatedPattern,
    /// Picks uniformly at random.
    RandomGuessing,
}

impl BehaviorArchetype {
    /// Short stable name for CSV output.
    pub fn name(&self) -> String {
        match self {
            BehaviorArchetype::PrimaryChoice(c) => format!("primary_choice_{c}"),
            BehaviorArchetype::RepeatedPattern => "repeated_pattern".into(),
            BehaviorArchetype::RandomGuessing => "random_guessing".into(),
        }
    }
}

impl std::fmt::Display for BehaviorArchetype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// Row-stochastic K-by-K transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    k: usize,
    rows: Vec<f64>,
}

impl TransitionMatrix {
    /// Validate and wrap a matrix given as rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ChainError> {
        let k = rows.len();
        if k < 2 {
            return Err(ChainError::BadMatrix("need at least 2 states".into()));
        }
        let mut flat = Vec::with_capacity(k * k);
        for row in &rows {
            if row.len() != k {
                return Err(ChainError::BadMatrix("matrix must be square".into()));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(ChainError::BadMatrix(format!(
                    "row must be a distribution (sum {sum})"
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self { k, rows: flat })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.k..(r + 1) * self.k]
    }
}

/// KLD score of one worker against one archetype target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldScore {
    pub worker_id: String,
    pub archetype: BehaviorArchetype,
    /// Row-wise `D(observed row || target row)`.
    pub row_klds: Vec<f64>,
    /// Arithmetic mean of `row_klds`.
    pub akld: f64,
    /// Minimum of `row_klds`.
    pub mkld: f64,
}

/// How cutoffs are applied when matching a worker to an archetype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Every row divergence must fall below the archetype cutoff.
    AllRowsBelow,
    /// The minimum row divergence must fall below the archetype cutoff.
    MinKldBelow,
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("response sequence has {0} entries; at least 2 are required")]
    SequenceTooShort(usize),
    #[error("category {value} out of range for {k} states")]
    CategoryOutOfRange { value: usize, k: usize },
    #[error("not a distribution: {0}")]
    NotADistribution(String),
    #[error("dimension mismatch: observed k={observed}, target k={target}")]
    DimensionMismatch { observed: usize, target: usize },
    #[error("threshold calibration mismatch: {0}")]
    ThresholdMismatch(String),
    #[error("invalid transition matrix: {0}")]
    BadMatrix(String),
}

/// Estimate a transition matrix from an ordered category sequence.
///
/// Row r is `(count(r->c) + alpha) / (count(r->.) + k*alpha)`. With no
/// smoothing, a state that is never left gets a uniform row.
pub fn estimate_transition_matrix(
    seq: &[usize],
    k: usize,
    alpha: f64,
) -> Result<TransitionMatrix, ChainError> {
    if seq.len() < 2 {
        return Err(ChainError::SequenceTooShort(seq.len()));
    }
    if let Some(&bad) = seq.iter().find(|&&v| v >= k) {
        return Err(ChainError::CategoryOutOfRange { value: bad, k });
    }
    let mut counts = vec![0.0f64; k * k];
    for win in seq.windows(2) {
        counts[win[0] * k + win[1]] += 1.0;
    }
    let mut rows = vec![0.0f64; k * k];
    for r in 0..k {
        let total: f64 = counts[r * k..(r + 1) * k].iter().sum();
        let denom = total + k as f64 * alpha;
        if denom == 0.0 {
            for c in 0..k {
                rows[r * k + c] = 1.0 / k as f64;
            }
        } else {
            for c in 0..k {
                rows[r * k + c] = (counts[r * k + c] + alpha) / denom;
            }
        }
    }
    Ok(TransitionMatrix { k, rows })
}

/// The target transition matrix of a spammer archetype.
pub fn target_matrix(a: BehaviorArchetype, k: usize) -> TransitionMatrix {
    assert!(k >= 2, "target matrices need k >= 2");
    let mut rows = vec![0.0f64; k * k];
    match a {
        BehaviorArchetype::PrimaryChoice(c) => {
            assert!(c < k, "preferred category {c} out of range for k={k}");
            for r in 0..k {
                rows[r * k + c] = 1.0;
            }
        }
        BehaviorArchetype::RepeatedPattern => {
            let off = 1.0 / (k as f64 - 1.0);
            for r in 0..k {
                for c in 0..k {
                    if r != c {
                        rows[r * k + c] = off;
                    }
                }
            }
        }
        BehaviorArchetype::RandomGuessing => {
            rows.fill(1.0 / k as f64);
        }
    }
    TransitionMatrix { k, rows }
}

/// KL divergence `D(p || q)` in nats, with both distributions smoothed as
/// `(v + eps) / (1 + k*eps)` so zero target entries stay finite.
pub fn kld_row(p: &[f64], q: &[f64], eps: f64) -> Result<f64, ChainError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(ChainError::NotADistribution(
            "length mismatch or empty".into(),
        ));
    }
    if eps <= 0.0 {
        return Err(ChainError::NotADistribution("eps must be positive".into()));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(ChainError::NotADistribution(format!(
                "{name} sums to {sum}"
            )));
        }
    }
    let k = p.len() as f64;
    let norm = 1.0 + k * eps;
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let ps = (pi + eps) / norm;
        let qs = (qi + eps) / norm;
        d += ps * (ps / qs).ln();
    }
    Ok(d.max(0.0))
}

/// Default smoothing applied before each row divergence.
pub const DEFAULT_KLD_EPS: f64 = 1e-9;

/// Score an observed transition matrix against an archetype target.
pub fn score_worker(
    worker_id: &str,
    obs: &TransitionMatrix,
    a: BehaviorArchetype,
    eps: f64,
) -> Result<KldScore, ChainError> {
    let target = target_matrix(a, obs.k);
    if target.k != obs.k {
        return Err(ChainError::DimensionMismatch {
            observed: obs.k,
            target: target.k,
        });
    }
    let mut row_klds = Vec::with_capacity(obs.k);
    for r in 0..obs.k {
        row_klds.push(kld_row(obs.row(r), target.row(r), eps)?);
    }
    let akld = row_klds.iter().sum::<f64>() / row_klds.len() as f64;
    let mkld = row_klds.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    Ok(KldScore {
        worker_id: worker_id.to_string(),
        archetype: a,
        row_klds,
        akld,
        mkld,
    })
}

/// Classify a worker from its per-archetype scores and calibrated cutoffs.
///
/// Returns the matching archetype with the smallest aKLD, or `None` when no
/// archetype matches under the given strategy.
pub fn classify_worker(
    scores: &[KldScore],
    thresholds: &ThresholdSet,
    strategy: MatchStrategy,
    data_n_tasks: usize,
) -> Result<Option<BehaviorArchetype>, ChainError> {
    let cal = thresholds.n_tasks as f64;
    let diff = (data_n_tasks as f64 - cal).abs() / cal;
    if diff > 0.25 {
        return Err(ChainError::ThresholdMismatch(format!(
            "cutoffs calibrated for {} tasks but data has {} per worker",
            thresholds.n_tasks, data_n_tasks
        )));
    }
    let mut best: Option<(&KldScore, f64)> = None;
    for s in scores {
        let beta = thresholds.beta_for(s.archetype);
        let matched = match strategy {
            MatchStrategy::AllRowsBelow => s.row_klds.iter().all(|&v| v < beta),
            MatchStrategy::MinKldBelow => s.mkld < beta,
        };
        if matched && best.map_or(true, |(b, _)| s.akld < b.akld) {
            best = Some((s, beta));
        }
    }
    Ok(best.map(|(s, _)| s.archetype))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = DEFAULT_KLD_EPS;

    #[test]
    fn alternating_sequence_estimates_switch_matrix() {
        let m = estimate_transition_matrix(&[0, 1, 0, 1, 0, 1], 2, 0.0).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn unvisited_row_falls_back_to_uniform() {
        let m = estimate_transition_matrix(&[0, 0, 0, 1], 2, 0.0).unwrap();
        assert!((m.row(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.row(0)[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn smoothing_pseudo_counts() {
        let m = estimate_transition_matrix(&[0, 0, 0, 0], 2, 1.0).unwrap();
        assert!((m.row(0)[0] - 0.8).abs() < 1e-15); // (3+1)/(3+2)
        assert!((m.row(0)[1] - 0.2).abs() < 1e-15);
        assert_eq!(m.row(1), &[0.5, 0.5]); // (0+1)/(0+2)
    }

    #[test]
    fn sequence_too_short() {
        assert!(matches!(
            estimate_transition_matrix(&[0], 2, 0.0),
            Err(ChainError::SequenceTooShort(1))
        ));
    }

    #[test]
    fn binary_target_matrices_match_canonical_forms() {
        let pc = target_matrix(BehaviorArchetype::PrimaryChoice(0), 2);
        assert_eq!(pc.row(0), &[1.0, 0.0]);
        assert_eq!(pc.row(1), &[1.0, 0.0]);
        let rp = target_matrix(BehaviorArchetype::RepeatedPattern, 2);
        assert_eq!(rp.row(0), &[0.0, 1.0]);
        assert_eq!(rp.row(1), &[1.0, 0.0]);
        let rg = target_matrix(BehaviorArchetype::RandomGuessing, 2);
        assert_eq!(rg.row(0), &[0.5, 0.5]);
        assert_eq!(rg.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn multiclass_repeated_pattern_is_uniform_off_diagonal() {
        let rp = target_matrix(BehaviorArchetype::RepeatedPattern, 4);
        for r in 0..4 {
            assert_eq!(rp.row(r)[r], 0.0);
            let s: f64 = rp.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kld_identical_distributions_is_zero() {
        assert_eq!(kld_row(&[0.5, 0.5], &[0.5, 0.5], EPS).unwrap(), 0.0);
        assert!(kld_row(&[1.0, 0.0], &[1.0, 0.0], EPS).unwrap() < 1e-8);
    }

    #[test]
    fn kld_hand_value() {
        // 0.9 ln 1.8 + 0.1 ln 0.2 = 0.3680642
        let v = kld_row(&[0.9, 0.1], &[0.5, 0.5], EPS).unwrap();
        assert!((v - 0.368_064_2).abs() < 1e-6);
    }

    #[test]
    fn kld_rejects_non_distribution() {
        assert!(kld_row(&[0.9, 0.3], &[0.5, 0.5], EPS).is_err());
        assert!(kld_row(&[0.5, 0.5], &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn score_against_own_target_is_zero() {
        let rg = target_matrix(BehaviorArchetype::RandomGuessing, 2);
        let s = score_worker("w", &rg, BehaviorArchetype::RandomGuessing, EPS).unwrap();
        assert_eq!(s.akld, 0.0);
        assert_eq!(s.mkld, 0.0);
    }

    #[test]
    fn score_skewed_rows_against_random_guessing() {
        let obs =
            TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.9, 0.1]]).unwrap();
        let s = score_worker("w", &obs, BehaviorArchetype::RandomGuessing, EPS).unwrap();
        assert!((s.akld - 0.368_064_2).abs() < 1e-6);
        assert!((s.mkld - 0.368_064_2).abs() < 1e-6);
    }

    #[test]
    fn mixed_style_worker_exposed_by_min_kld() {
        // Row 0 far from the primary-choice target, row 1 exactly on it: the
        // minimum row divergence is ~0 even though the average is large.
        let obs =
            TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let s = score_worker("w", &obs, BehaviorArchetype::PrimaryChoice(0), EPS).unwrap();
        // D((0.5,0.5) || (1,0)) with 1e-9 smoothing = 0.5 ln 0.5 + 0.5 ln(0.5/1e-9)
        assert!((s.row_klds[0] - 9.668_486).abs() < 1e-3);
        assert!(s.row_klds[1] < 1e-8);
        assert!(s.mkld < 1e-8);
        assert!(s.akld > 4.0);
    }

    fn test_thresholds() -> ThresholdSet {
        ThresholdSet {
            beta_pc: 3.367_109,
            beta_rp: 3.924_257,
            beta_rg: 0.002_212_449,
            alpha: 0.05,
            n_sims: 30_000,
            n_tasks: 80,
            k: 2,
            type2_pc: 0.0,
            type2_rp: 0.0,
            type2_rg: 0.0,
            seed: 0,
            log_base: "natural".into(),
            low_precision: false,
        }
    }

    #[test]
    fn constant_worker_matches_primary_choice_via_min_kld() {
        // An all-zeros worker checked against the primary-choice cutoff: the
        // visited row sits exactly on the target, so the minimum KLD is 0.
        let seq = vec![0usize; 80];
        let obs = estimate_transition_matrix(&seq, 2, 0.0).unwrap();
        let scores =
            vec![score_worker("w", &obs, BehaviorArchetype::PrimaryChoice(0), EPS).unwrap()];
        let m = classify_worker(&scores, &test_thresholds(), MatchStrategy::MinKldBelow, 80)
            .unwrap();
        assert_eq!(m, Some(BehaviorArchetype::PrimaryChoice(0)));
        // The strict rule rejects it: the never-visited row falls back to
        // uniform, far from the point-mass target row.
        let strict = classify_worker(&scores, &test_thresholds(), MatchStrategy::AllRowsBelow, 80)
            .unwrap();
        assert_eq!(strict, None);
    }

    #[test]
    fn alternating_worker_matches_repeated_pattern() {
        let seq: Vec<usize> = (0..80).map(|i| i % 2).collect();
        let obs = estimate_transition_matrix(&seq, 2, 0.0).unwrap();
        let scores = vec![
            score_worker("w", &obs, BehaviorArchetype::PrimaryChoice(0), EPS).unwrap(),
            score_worker("w", &obs, BehaviorArchetype::RepeatedPattern, EPS).unwrap(),
            score_worker("w", &obs, BehaviorArchetype::RandomGuessing, EPS).unwrap(),
        ];
        let m = classify_worker(&scores, &test_thresholds(), MatchStrategy::AllRowsBelow, 80)
            .unwrap();
        assert_eq!(m, Some(BehaviorArchetype::RepeatedPattern));
    }

    #[test]
    fn no_match_returns_none() {
        // A worker leaning 0.9/0.1 both rows is far from every target under
        // the strict all-rows rule with these cutoffs.
        let obs =
            TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let scores = vec![
            score_worker("w", &obs, BehaviorArchetype::PrimaryChoice(0), EPS).unwrap(),
            score_worker("w", &obs, BehaviorArchetype::RepeatedPattern, EPS).unwrap(),
            score_worker("w", &obs, BehaviorArchetype::RandomGuessing, EPS).unwrap(),
        ];
        let mut th = test_thresholds();
        th.beta_pc = 0.01;
        th.beta_rp = 0.01;
        th.beta_rg = 0.001;
        let m =
            classify_worker(&scores, &th, MatchStrategy::AllRowsBelow, 80).unwrap();
        assert_eq!(m, None);
    }

    #[test]
    fn threshold_task_count_mismatch_is_rejected() {
        let obs = target_matrix(BehaviorArchetype::RandomGuessing, 2);
        let scores =
            vec![score_worker("w", &obs, BehaviorArchetype::RandomGuessing, EPS).unwrap()];
        let err = classify_worker(&scores, &test_thresholds(), MatchStrategy::MinKldBelow, 200)
            .unwrap_err();
        assert!(matches!(err, ChainError::ThresholdMismatch(_)));
    }

    #[test]
    fn mkld_never_exceeds_akld() {
        let obs =
            TransitionMatrix::from_rows(vec![vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap();
        for a in [
            BehaviorArchetype::PrimaryChoice(0),
            BehaviorArchetype::RepeatedPattern,
            BehaviorArchetype::RandomGuessing,
        ] {
            let s = score_worker("w", &obs, a, EPS).unwrap();
            assert!(s.mkld <= s.akld + 1e-15);
        }
    }
}
