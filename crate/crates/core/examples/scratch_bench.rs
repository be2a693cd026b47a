//! Scratch benchmark driver (not part of the deliverable).

use std::time::Instant;

use tgdm_core::data::{generate_synthetic_domain, make_splits, DomainShiftSpec, SplitConfig};
use tgdm_core::eval::{evaluate_accuracy, lambda_trajectory_stats, novel_dataset, EvalConfig};
use tgdm_core::train::{train, TrainConfig, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let n_query: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let rotation: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(45.0);
    let translation: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2.5);
    let spread: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.35);
    let seeds: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1);
    let aux_cap: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(20);
    let aux_classes: usize = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(5);
    let tgt_classes: usize = args.get(12).and_then(|s| s.parse().ok()).unwrap_or(12);
    let tgdm_too: bool = args.get(8).map(|s| s == "tgdm").unwrap_or(false);
    let src_classes: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(20);
    let eval_eps: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(600);

    let d = 16;
    let source = generate_synthetic_domain(
        "src",
        100,
        src_classes,
        50,
        d,
        &DomainShiftSpec { rotation_deg: 0.0, translation: 0.0, spread },
    )
    .unwrap();
    let target = generate_synthetic_domain(
        "tgt",
        101,
        tgt_classes,
        40,
        d,
        &DomainShiftSpec { rotation_deg: rotation, translation, spread },
    )
    .unwrap();
    let split = make_splits(
        &source,
        &target,
        &SplitConfig { aux_classes, novel_classes: 7, aux_cap_per_class: Some(aux_cap), seed: 0, ..Default::default() },
    )
    .unwrap();
    let novel = novel_dataset(&target, &split).unwrap();

    for seed in 0..seeds {
        let mut variants = vec![Variant::MBase, Variant::base_m3t()];
        if tgdm_too {
            variants.push(Variant::Tgdm);
        }
        for variant in variants {
            let cfg = TrainConfig {
                iterations: iters,
                n_way: 5,
                k_shot: 1,
                n_query,
                seed,
                log_every: 0,
                variant,
                ..TrainConfig::default()
            };
            let t0 = Instant::now();
            let result = train(&source, &target, &split, &cfg).unwrap();
            let train_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let eval_cfg = EvalConfig { n_way: 5, k_shot: 1, n_query: 15, n_episodes: eval_eps, seed };
            let report = evaluate_accuracy(&result.model, &novel, &eval_cfg, variant.tag(), "x").unwrap();
            let eval_s = t1.elapsed().as_secs_f64();
            let stats = lambda_trajectory_stats(&result.log).unwrap();
            println!(
                "seed={seed} {:<9} acc={:.4} ci={:.4} train={:.1}s eval={:.1}s lam_mean={:.3} lam_sd={:.4}",
                variant.tag(),
                report.mean_acc,
                report.ci95,
                train_s,
                eval_s,
                stats.mean,
                stats.stddev
            );
        }
    }
}
