//! Synthetic credible and spammer response generators.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SimConfig, SimError};
use crate::chains::BehaviorArchetype;
use crate::data::{Dataset, ResponseRecord, ScaleKind};
use crate::glrm::VarianceComponents;
use crate::numeric::{derive_seed, logistic};
use crate::simulate::expected_longest_run;

pub(crate) const TAG_TASKS: u64 = 0x7461_736b;
pub(crate) const TAG_WORKER: u64 = 0x776f_726b;
pub(crate) const TAG_SPAMMER: u64 = 0x7370_616d;

/// Switch probability of the repeated-pattern generator.
pub const REPEATED_PATTERN_SWITCH: f64 = 0.8;

fn normal(rng: &mut ChaCha12Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sd
}

/// Per-worker draws that stay fixed while the task scale is calibrated.
struct WorkerDraws {
    effect: f64,
    interaction: Vec<f64>,
    uniform: Vec<f64>,
}

fn worker_draws(seed: u64, worker: u64, n_tasks: usize, vc: &VarianceComponents) -> WorkerDraws {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, TAG_WORKER, worker));
    let effect = normal(&mut rng, vc.sigma2_workers.sqrt());
    let sd_wt = vc.sigma2_interaction.sqrt();
    let mut interaction = Vec::with_capacity(n_tasks);
    let mut uniform = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        interaction.push(normal(&mut rng, sd_wt));
        uniform.push(rng.random::<f64>());
    }
    WorkerDraws {
        effect,
        interaction,
        uniform,
    }
}

fn task_effects(seed: u64, n_tasks: usize, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, TAG_TASKS, 0));
    (0..n_tasks).map(|_| normal(&mut rng, sd)).collect()
}

/// A credible-simulation outcome with its calibration context.
#[derive(Debug, Clone)]
pub struct CredibleSim {
    pub dataset: Dataset,
    /// Multiplier applied to the task effects by the accuracy calibration.
    pub scale_multiplier: f64,
    /// Variance components actually realized after calibration.
    pub realized_vc: VarianceComponents,
}

/// Draw a dataset directly from the binary model without any accuracy
/// calibration. Ground truth is the sign of each task effect.
pub fn simulate_from_model(
    n_workers: usize,
    n_tasks: usize,
    vc: &VarianceComponents,
    intercept: f64,
    seed: u64,
) -> Result<Dataset, SimError> {
    let tasks = task_effects(seed, n_tasks, vc.sigma2_tasks.sqrt());
    let scale = crate::data::ResponseScale::binary("0", "1")?;
    let mut records = Vec::with_capacity(n_workers * n_tasks);
    for w in 0..n_workers {
        let draws = worker_draws(seed, w as u64, n_tasks, vc);
        for (t, &te) in tasks.iter().enumerate() {
            let p = logistic(intercept + draws.effect + te + draws.interaction[t]);
            let response = usize::from(draws.uniform[t] < p);
            records.push(ResponseRecord {
                worker_id: (w + 1).to_string(),
                task_id: format!("t{}", t + 1),
                response,
                order: Some(t as u64 + 1),
                duration_seconds: None,
                truth: Some(usize::from(te > 0.0)),
            });
        }
    }
    Ok(Dataset::from_records(scale, records)?)
}

fn worker_accuracy(
    draws: &WorkerDraws,
    tasks: &[f64],
    scale_multiplier: f64,
) -> f64 {
    let mut hits = 0usize;
    for (t, &te) in tasks.iter().enumerate() {
        let shifted = te * scale_multiplier;
        let p = logistic(draws.effect + shifted + draws.interaction[t]);
        let resp = draws.uniform[t] < p;
        let truth = te > 0.0;
        if resp == truth {
            hits += 1;
        }
    }
    hits as f64 / tasks.len() as f64
}

/// Simulate credible workers, rescaling task effects so that realized
/// per-worker accuracy lands in the configured band for at least 90% of
/// workers.
pub fn simulate_credible_detailed(config: &SimConfig) -> Result<CredibleSim, SimError> {
    if config.scale.kind() != ScaleKind::Binary {
        return Err(SimError::WrongScale(
            "binary credible generator requires a binary scale; see simulate_multiclass".into(),
        ));
    }
    let (lo, hi) = config.accuracy_band;
    let n_tasks = config.n_tasks;
    let tasks = task_effects(config.seed, n_tasks, config.vc.sigma2_tasks.sqrt());
    let draws: Vec<WorkerDraws> = (0..config.n_workers)
        .map(|w| worker_draws(config.seed, w as u64, n_tasks, &config.vc))
        .collect();

    // Per-worker accuracy is monotone in the task-effect scale (the uniform
    // draws are shared across candidate scales), so bisection on the mean
    // accuracy is well posed. Try band-interior targets until enough workers
    // land inside.
    let accuracies = |c: f64| -> Vec<f64> {
        draws.iter().map(|d| worker_accuracy(d, &tasks, c)).collect()
    };
    let mean_acc = |c: f64| -> f64 {
        let a = accuracies(c);
        a.iter().sum::<f64>() / a.len() as f64
    };
    let capture = |acc: &[f64]| -> f64 {
        acc.iter().filter(|&&a| a >= lo && a <= hi).count() as f64 / acc.len() as f64
    };

    let mid = 0.5 * (lo + hi);
    let targets = [
        mid,
        mid - 0.01,
        mid + 0.01,
        mid - 0.02,
        mid + 0.02,
        mid - 0.03,
        mid + 0.03,
        mid - 0.04,
        mid + 0.04,
    ];
    let mut best: Option<(f64, f64)> = None; // (capture, scale)
    for &target in &targets {
        let (mut a, mut b) = (0.02f64, 25.0f64);
        if mean_acc(b) < target || mean_acc(a) > target {
            continue;
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if mean_acc(m) < target {
                a = m;
            } else {
                b = m;
            }
        }
        let c = 0.5 * (a + b);
        let cap = capture(&accuracies(c));
        if best.map_or(true, |(bc, _)| cap > bc) {
            best = Some((cap, c));
        }
    }
    let c = match best {
        Some((cap, c)) if cap >= 0.9 => c,
        _ => {
            return Err(SimError::CalibrationFailure(format!(
                "no task-effect scale reaches the accuracy band [{lo}, {hi}] for 90% of workers"
            )))
        }
    };

    let mut records = Vec::with_capacity(config.n_workers * n_tasks);
    for (w, d) in draws.iter().enumerate() {
        for (t, &te) in tasks.iter().enumerate() {
            let p = logistic(d.effect + te * c + d.interaction[t]);
            let response = usize::from(d.uniform[t] < p);
            records.push(ResponseRecord {
                worker_id: (w + 1).to_string(),
                task_id: format!("t{}", t + 1),
                response,
                order: Some(t as u64 + 1),
                duration_seconds: None,
                truth: Some(usize::from(te > 0.0)),
            });
        }
    }
    let dataset = Dataset::from_records(config.scale.clone(), records)?;
    Ok(CredibleSim {
        dataset,
        scale_multiplier: c,
        realized_vc: VarianceComponents::new(
            config.vc.sigma2_workers,
            config.vc.sigma2_tasks * c * c,
            config.vc.sigma2_interaction,
        ),
    })
}

/// Simulate one spammer's response sequence.
pub fn simulate_spammer_sequence(
    archetype: BehaviorArchetype,
    k: usize,
    n_tasks: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    match archetype {
        BehaviorArchetype::PrimaryChoice(preferred) => {
            primary_choice_sequence(preferred, k, n_tasks, &mut rng)
        }
        BehaviorArchetype::RepeatedPattern => repeated_pattern_sequence(k, n_tasks, &mut rng),
        BehaviorArchetype::RandomGuessing => {
            (0..n_tasks).map(|_| rng.random_range(0..k)).collect()
        }
    }
}

/// Runs of the preferred answer, each at least the longest-run threshold,
/// separated by single non-preferred responses.
fn primary_choice_sequence(
    preferred: usize,
    k: usize,
    n_tasks: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<usize> {
    let threshold = expected_longest_run(n_tasks.max(2), 0.5).threshold;
    let mut seq = Vec::with_capacity(n_tasks);
    while seq.len() < n_tasks {
        // Small geometric extension beyond the minimum run length.
        let mut extra = 0usize;
        while rng.random::<f64>() < 0.3 && extra < 6 {
            extra += 1;
        }
        let run = threshold + extra;
        let remaining = n_tasks - seq.len();
        if remaining < run + 1 + threshold {
            seq.extend(std::iter::repeat(preferred).take(remaining));
        } else {
            seq.extend(std::iter::repeat(preferred).take(run));
            let other = if k == 2 {
                1 - preferred
            } else {
                let mut o = rng.random_range(0..k - 1);
                if o >= preferred {
                    o += 1;
                }
                o
            };
            seq.push(other);
        }
    }
    seq.truncate(n_tasks);
    seq
}

/// First response uniform, then switch away with probability 0.8.
fn repeated_pattern_sequence(k: usize, n_tasks: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut seq = Vec::with_capacity(n_tasks);
    seq.push(rng.random_range(0..k));
    for _ in 1..n_tasks {
        let last = *seq.last().unwrap();
        let next = if rng.random::<f64>() < REPEATED_PATTERN_SWITCH {
            if k == 2 {
                1 - last
            } else {
                let mut o = rng.random_range(0..k - 1);
                if o >= last {
                    o += 1;
                }
                o
            }
        } else {
            last
        };
        seq.push(next);
    }
    seq
}

/// Expand the spammer mix into per-worker archetypes, preferred categories
/// drawn per spammer.
pub(crate) fn spammer_assignments(
    mix: &[(BehaviorArchetype, usize)],
    k: usize,
    seed: u64,
) -> Vec<BehaviorArchetype> {
    let mut out = Vec::new();
    let mut idx = 0u64;
    for &(archetype, count) in mix {
        for _ in 0..count {
            let a = match archetype {
                BehaviorArchetype::PrimaryChoice(c) if c < k => BehaviorArchetype::PrimaryChoice(c),
                BehaviorArchetype::PrimaryChoice(_) => {
                    let mut rng =
                        ChaCha12Rng::seed_from_u64(derive_seed(seed, TAG_SPAMMER, 1_000_000 + idx));
                    BehaviorArchetype::PrimaryChoice(rng.random_range(0..k))
                }
                other => other,
            };
            out.push(a);
            idx += 1;
        }
    }
    out
}

/// Credible block with the first workers replaced by simulated spammers.
pub fn simulate_contaminated(config: &SimConfig) -> Result<Dataset, SimError> {
    let base = simulate_credible_detailed(config)?;
    substitute_spammers(base.dataset, config)
}

pub(crate) fn substitute_spammers(
    dataset: Dataset,
    config: &SimConfig,
) -> Result<Dataset, SimError> {
    let k = config.scale.num_categories();
    let assignments = spammer_assignments(&config.spammer_mix, k, config.seed);
    if assignments.is_empty() {
        return Ok(dataset);
    }
    if assignments.len() > config.n_workers {
        return Err(SimError::CalibrationFailure(format!(
            "spammer mix ({}) exceeds worker count ({})",
            assignments.len(),
            config.n_workers
        )));
    }
    let n_tasks = config.n_tasks;
    let mut records = dataset.records().to_vec();
    for (w, &archetype) in assignments.iter().enumerate() {
        let seq = simulate_spammer_sequence(
            archetype,
            k,
            n_tasks,
            derive_seed(config.seed, TAG_SPAMMER, w as u64),
        );
        for (t, &resp) in seq.iter().enumerate() {
            records[w * n_tasks + t].response = resp;
        }
    }
    Ok(Dataset::from_records(config.scale.clone(), records)?)
}

/// Fixed ordinal cut points used by the multiclass generator: evenly spaced
/// and symmetric about zero.
pub(crate) fn default_cutpoints(k: usize) -> Vec<f64> {
    let span = 2.4;
    (1..k)
        .map(|i| -span + 2.0 * span * (i as f64 - 0.5) / (k as f64 - 1.0))
        .collect()
}

/// Simulate ordinal or nominal response data with optional spammer
/// substitution.
pub fn simulate_multiclass(config: &SimConfig) -> Result<Dataset, SimError> {
    let k = config.scale.num_categories();
    if k < 3 {
        return Err(SimError::WrongScale(
            "multiclass generator requires K >= 3; use the binary generator".into(),
        ));
    }
    let n_tasks = config.n_tasks;
    let sd_w = config.vc.sigma2_workers.sqrt();
    let sd_t = config.vc.sigma2_tasks.sqrt();
    let sd_wt = config.vc.sigma2_interaction.sqrt();
    let mut records = Vec::with_capacity(config.n_workers * n_tasks);

    match config.scale.kind() {
        ScaleKind::Ordinal => {
            let cuts = default_cutpoints(k);
            let tasks = task_effects(config.seed, n_tasks, sd_t);
            let truth: Vec<usize> = tasks
                .iter()
                .map(|&te| cuts.iter().filter(|&&c| te > c).count())
                .collect();
            for w in 0..config.n_workers {
                let mut rng =
                    ChaCha12Rng::seed_from_u64(derive_seed(config.seed, TAG_WORKER, w as u64));
                let we = normal(&mut rng, sd_w);
                for (t, &te) in tasks.iter().enumerate() {
                    let wt = normal(&mut rng, sd_wt);
                    let u: f64 = rng.random();
                    let noise = (u / (1.0 - u)).ln(); // standard logistic draw
                    let latent = we + te + wt + noise;
                    let response = cuts.iter().filter(|&&c| latent > c).count();
                    records.push(ResponseRecord {
                        worker_id: (w + 1).to_string(),
                        task_id: format!("t{}", t + 1),
                        response,
                        order: Some(t as u64 + 1),
                        duration_seconds: None,
                        truth: Some(truth[t]),
                    });
                }
            }
        }
        ScaleKind::Nominal => {
            // Per-category task and worker effects; reference category 0.
            let mut task_rng =
                ChaCha12Rng::seed_from_u64(derive_seed(config.seed, TAG_TASKS, 0));
            let mut tasks = vec![vec![0.0f64; k - 1]; n_tasks];
            for row in tasks.iter_mut() {
                for v in row.iter_mut() {
                    *v = normal(&mut task_rng, sd_t);
                }
            }
            let truth: Vec<usize> = tasks
                .iter()
                .map(|row| {
                    let mut best = 0usize;
                    let mut best_v = 0.0f64; // reference category utility
                    for (c, &v) in row.iter().enumerate() {
                        if v > best_v {
                            best = c + 1;
                            best_v = v;
                        }
                    }
                    best
                })
                .collect();
            for w in 0..config.n_workers {
                let mut rng =
                    ChaCha12Rng::seed_from_u64(derive_seed(config.seed, TAG_WORKER, w as u64));
                let we: Vec<f64> = (0..k - 1).map(|_| normal(&mut rng, sd_w)).collect();
                for (t, task_row) in tasks.iter().enumerate() {
                    let mut weights = Vec::with_capacity(k);
                    weights.push(1.0f64);
                    for c in 0..k - 1 {
                        let wt = normal(&mut rng, sd_wt);
                        weights.push((we[c] + task_row[c] + wt).clamp(-30.0, 30.0).exp());
                    }
                    let total: f64 = weights.iter().sum();
                    let mut u: f64 = rng.random::<f64>() * total;
                    let mut response = k - 1;
                    for (c, &wv) in weights.iter().enumerate() {
                        if u < wv {
                            response = c;
                            break;
                        }
                        u -= wv;
                    }
                    records.push(ResponseRecord {
                        worker_id: (w + 1).to_string(),
                        task_id: format!("t{}", t + 1),
                        response,
                        order: Some(t as u64 + 1),
                        duration_seconds: None,
                        truth: Some(truth[t]),
                    });
                }
            }
        }
        ScaleKind::Binary => unreachable!("guarded above"),
    }

    let dataset = Dataset::from_records(config.scale.clone(), records)?;
    substitute_spammers(dataset, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ResponseScale;

    #[test]
    fn primary_choice_runs_meet_threshold() {
        for seed in 0..20 {
            let seq =
                simulate_spammer_sequence(BehaviorArchetype::PrimaryChoice(0), 2, 80, seed);
            assert_eq!(seq.len(), 80);
            let mut run = 0usize;
            let mut runs = Vec::new();
            for &v in &seq {
                if v == 0 {
                    run += 1;
                } else if run > 0 {
                    runs.push(run);
                    run = 0;
                }
            }
            if run > 0 {
                runs.push(run);
            }
            assert!(
                runs.iter().all(|&r| r >= 10),
                "seed {seed}: runs {runs:?} below threshold"
            );
        }
    }

    #[test]
    fn repeated_pattern_switch_rate() {
        let seq = simulate_spammer_sequence(BehaviorArchetype::RepeatedPattern, 2, 10_000, 3);
        let switches = seq.windows(2).filter(|w| w[0] != w[1]).count();
        let rate = switches as f64 / (seq.len() - 1) as f64;
        assert!((rate - 0.8).abs() < 0.01, "switch rate {rate}");
    }

    #[test]
    fn random_guessing_is_balanced() {
        let seq = simulate_spammer_sequence(BehaviorArchetype::RandomGuessing, 2, 10_000, 4);
        let ones = seq.iter().filter(|&&v| v == 1).count() as f64 / seq.len() as f64;
        assert!((ones - 0.5).abs() < 0.015, "frequency of ones {ones}");
    }

    #[test]
    fn spammer_sequences_are_seed_deterministic() {
        for a in [
            BehaviorArchetype::PrimaryChoice(1),
            BehaviorArchetype::RepeatedPattern,
            BehaviorArchetype::RandomGuessing,
        ] {
            let s1 = simulate_spammer_sequence(a, 2, 200, 9);
            let s2 = simulate_spammer_sequence(a, 2, 200, 9);
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn zero_signal_config_fails_calibration() {
        let config = SimConfig {
            n_workers: 20,
            n_tasks: 40,
            scale: ResponseScale::binary("0", "1").unwrap(),
            vc: VarianceComponents::new(0.0, 0.0, 0.0),
            spammer_mix: vec![],
            seed: 5,
            accuracy_band: (0.75, 0.9),
        };
        assert!(matches!(
            simulate_credible_detailed(&config),
            Err(SimError::CalibrationFailure(_))
        ));
    }

    #[test]
    fn contaminated_with_empty_mix_equals_credible() {
        let config = SimConfig::binary(30, 80, 11);
        let a = simulate_contaminated(&config).unwrap();
        let b = simulate_credible_detailed(&config).unwrap().dataset;
        assert_eq!(a, b);
    }

    #[test]
    fn contaminated_replaces_leading_workers() {
        let mut config = SimConfig::binary(30, 80, 11);
        config.spammer_mix = vec![(BehaviorArchetype::PrimaryChoice(0), 2)];
        let base = simulate_credible_detailed(&config).unwrap().dataset;
        let cont = simulate_contaminated(&config).unwrap();
        assert_eq!(cont.records().len(), base.records().len());
        let seq = cont.response_sequence("1").unwrap();
        let longest = seq
            .split(|&v| v != 0)
            .map(<[usize]>::len)
            .max()
            .unwrap();
        assert!(longest >= 10);
        // Non-substituted workers keep their credible rows.
        assert_eq!(
            cont.response_sequence("25").unwrap(),
            base.response_sequence("25").unwrap()
        );
    }

    #[test]
    fn multiclass_requires_k3() {
        let config = SimConfig::binary(10, 10, 1);
        assert!(matches!(
            simulate_multiclass(&config),
            Err(SimError::WrongScale(_))
        ));
    }

    #[test]
    fn ordinal_truth_tracks_task_effects() {
        let scale = ResponseScale::new(
            crate::data::ScaleKind::Ordinal,
            (1..=5).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let config = SimConfig {
            n_workers: 20,
            n_tasks: 30,
            scale,
            vc: VarianceComponents::new(0.1, 4.0, 0.1),
            spammer_mix: vec![],
            seed: 2,
            accuracy_band: (0.75, 0.9),
        };
        let d = simulate_multiclass(&config).unwrap();
        // Responses should correlate with truth: exact agreement well above
        // the 1/K chance level.
        let hits = d
            .records()
            .iter()
            .filter(|r| Some(r.response) == r.truth)
            .count() as f64;
        assert!(hits / d.records().len() as f64 > 0.35);
    }
}
