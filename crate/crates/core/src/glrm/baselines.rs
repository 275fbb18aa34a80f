//! Agreement baselines compared against the variance-ratio index.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::FitError;
use crate::data::Dataset;
use crate::numeric::derive_seed;

const SUBSAMPLE_TAG: u64 = 0x666c_6569;

/// Fleiss' Kappa over the task-by-category count matrix.
///
/// The formula assumes a balanced design. Unbalanced tasks are subsampled to
/// the minimum common rater count with a seeded shuffle, so results are
/// reproducible and the handling of missing ratings is explicit.
pub fn fleiss_kappa(d: &Dataset, seed: u64) -> Result<f64, FitError> {
    let k = d.scale().num_categories();
    let mut per_task: Vec<Vec<usize>> = vec![Vec::new(); d.n_tasks()];
    for (r, &(_, tj)) in d.records().iter().zip(d.dense_rows()) {
        per_task[tj as usize].push(r.response);
    }
    fleiss_from_lists(&per_task, k, seed)
}

pub(crate) fn fleiss_from_lists(
    per_task: &[Vec<usize>],
    k: usize,
    seed: u64,
) -> Result<f64, FitError> {
    let m = per_task.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 {
        return Err(FitError::InsufficientRaters(format!(
            "every task needs at least 2 ratings (minimum observed: {m})"
        )));
    }
    let n_tasks = per_task.len() as f64;
    let mf = m as f64;
    let mut cat_totals = vec![0.0f64; k];
    let mut p_bar = 0.0;
    for (tj, ratings) in per_task.iter().enumerate() {
        let chosen: Vec<usize> = if ratings.len() == m {
            ratings.clone()
        } else {
            let mut shuffled = ratings.clone();
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, SUBSAMPLE_TAG, tj as u64));
            shuffled.shuffle(&mut rng);
            shuffled.truncate(m);
            shuffled
        };
        let mut counts = vec![0.0f64; k];
        for c in chosen {
            counts[c] += 1.0;
        }
        let agree: f64 = counts.iter().map(|c| c * c).sum::<f64>() - mf;
        p_bar += agree / (mf * (mf - 1.0));
        for (t, c) in cat_totals.iter_mut().zip(&counts) {
            *t += c;
        }
    }
    p_bar /= n_tasks;
    let pe: f64 = cat_totals
        .iter()
        .map(|t| {
            let p = t / (n_tasks * mf);
            p * p
        })
        .sum();
    if (1.0 - pe).abs() < 1e-12 || (p_bar - 1.0).abs() < 1e-12 {
        // Complete agreement (or a degenerate single-category table).
        return Ok(1.0);
    }
    Ok((p_bar - pe) / (1.0 - pe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, ResponseRecord, ResponseScale};

    fn dataset_from_grid(assignments: &[Vec<usize>]) -> Dataset {
        let scale = ResponseScale::binary("no", "yes").unwrap();
        let mut records = Vec::new();
        for (w, row) in assignments.iter().enumerate() {
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
    fn perfect_agreement_is_one() {
        let rows: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..6).map(|t| usize::from(t % 2 == 0)).collect())
            .collect();
        let d = dataset_from_grid(&rows);
        assert_eq!(fleiss_kappa(&d, 1).unwrap(), 1.0);
    }

    #[test]
    fn split_counts_hand_value() {
        // 10 tasks, 4 raters each, every task split 2/2 between categories:
        // P_bar = 1/3, P_e = 1/2, kappa = -1/3.
        let rows: Vec<Vec<usize>> = (0..4).map(|w| vec![usize::from(w < 2); 10]).collect();
        let d = dataset_from_grid(&rows);
        let kappa = fleiss_kappa(&d, 1).unwrap();
        assert!((kappa + 1.0 / 3.0).abs() < 1e-12, "kappa {kappa}");
    }

    #[test]
    fn single_rater_task_is_rejected() {
        let lists = vec![vec![0, 1, 1], vec![1]];
        assert!(matches!(
            fleiss_from_lists(&lists, 2, 1),
            Err(FitError::InsufficientRaters(_))
        ));
    }

    #[test]
    fn unbalanced_tasks_subsample_deterministically() {
        let lists = vec![vec![0, 1, 1, 0, 1], vec![1, 1, 0], vec![0, 0, 1, 1]];
        let a = fleiss_from_lists(&lists, 2, 9).unwrap();
        let b = fleiss_from_lists(&lists, 2, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        // A different seed may pick a different subsample of the long tasks.
        let c = fleiss_from_lists(&lists, 2, 10).unwrap();
        assert!(c.is_finite());
    }
}
