//! Scratch harness for checking simulation-study calibrations.

use crowdqc_core::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("si");
    let seeds: u64 = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);

    match mode {
        "si" => si_study(seeds),
        "del" => deletion_study(seeds),
        "chi" => chi_shape(seeds),
        _ => eprintln!("unknown mode"),
    }
}

fn contaminated_config(seed: u64) -> SimConfig {
    let mut c = SimConfig::binary(120, 80, seed);
    c.spammer_mix = vec![
        (BehaviorArchetype::PrimaryChoice(0), 4),
        (BehaviorArchetype::RepeatedPattern, 4),
        (BehaviorArchetype::RandomGuessing, 4),
    ];
    c
}

fn si_study(seeds: u64) {
    let t0 = std::time::Instant::now();
    for seed in 0..seeds {
        let clean_cfg = SimConfig::binary(120, 80, seed);
        let detail = simulate_credible_detailed(&clean_cfg).unwrap();
        let clean = detail.dataset;
        let gen_si = spammer_index(&detail.realized_vc).unwrap();
        let fit_c = fit_binary_glrm(&clean, &FitConfig::default()).unwrap();
        let si_c = fit_c.spammer_index().unwrap();
        let cont = simulate_contaminated(&contaminated_config(seed)).unwrap();
        let fit_x = fit_binary_glrm(&cont, &FitConfig::default()).unwrap();
        let si_x = fit_x.spammer_index().unwrap();
        let vc = fit_x.variance_components().unwrap();
        println!(
            "seed {seed}: scale_mult={:.3} gen_si={:.4} clean_si={:.5} cont_si={:.5} cont_vc=({:.3},{:.3},{:.3}) evals={} [{:.1}s]",
            detail.scale_multiplier,
            gen_si,
            si_c,
            si_x,
            vc.sigma2_workers,
            vc.sigma2_tasks,
            vc.sigma2_interaction,
            fit_x.outer_evals,
            t0.elapsed().as_secs_f64()
        );
    }
}

fn deletion_study(seeds: u64) {
    let t0 = std::time::Instant::now();
    for seed in 0..seeds {
        let cont = simulate_contaminated(&contaminated_config(seed)).unwrap();
        let report = deletion_analysis(&cont, &DeletionConfig::default()).unwrap();
        let spam_flagged = report.results[..12].iter().filter(|r| r.flagged).count();
        let fp = report.results[12..].iter().filter(|r| r.flagged).count();
        let pc_dev: Vec<f64> = report.results[..4].iter().map(|r| r.deviance).collect();
        let rp_dev: Vec<f64> = report.results[4..8].iter().map(|r| r.deviance).collect();
        let rg_dev: Vec<f64> = report.results[8..12].iter().map(|r| r.deviance).collect();
        let cred_max = report.results[12..]
            .iter()
            .map(|r| r.deviance)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "seed {seed}: spam_flagged={spam_flagged}/12 fp={fp} pc={pc_dev:.0?} rp={rp_dev:.0?} rg={rg_dev:.0?} cred_max={cred_max:.1} [{:.1}s]",
            t0.elapsed().as_secs_f64()
        );
    }
}

fn chi_shape(seeds: u64) {
    for seed in 0..seeds {
        let clean_cfg = SimConfig::binary(120, 80, seed);
        let clean = simulate_credible(&clean_cfg).unwrap();
        let report = deletion_analysis(&clean, &DeletionConfig::default()).unwrap();
        let devs: Vec<f64> = report.results.iter().map(|r| r.deviance).collect();
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let sd = (devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (devs.len() - 1) as f64)
            .sqrt();
        println!(
            "seed {seed}: ks={:?} mean={mean:.1} sd={sd:.1} min={:.1} max={:.1}",
            report.ks_distance_chi2,
            devs.iter().cloned().fold(f64::INFINITY, f64::min),
            devs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
    }
}
