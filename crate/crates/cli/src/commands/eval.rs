//! `tgdm eval`: evaluate a checkpoint on the novel split, or run the whole
//! baseline ladder with --suite.

use std::io::Write;

use tgdm_core::eval::{
    config_digest, evaluate_accuracy, lambda_trajectory_stats, novel_dataset,
    run_baseline_suite, EvalReport,
};
use tgdm_core::model::{load_checkpoint, Mixup3TParams, ModelConfig};
use tgdm_core::train::Variant;

use crate::commands::{load_run_config, resolve_datasets, resolve_split};
use crate::{CliError, EvalArgs};

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = load_run_config(&args.config)?;
    let mut eval_cfg = cfg.eval_config();
    if let Some(episodes) = args.episodes {
        eval_cfg.n_episodes = episodes;
    }
    if let Some(seed) = args.seed {
        eval_cfg.seed = seed;
    }
    if let Some(k) = args.k_shot {
        eval_cfg.k_shot = k;
    }

    let (source, target) = resolve_datasets(&cfg)?;
    let split = resolve_split(&cfg, &source, &target)?;
    let novel = novel_dataset(&target, &split)?;

    let out_path = args.out.clone().unwrap_or_else(|| cfg.out_dir.join("eval.jsonl"));
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut reports: Vec<EvalReport> = Vec::new();

    if args.suite {
        // Ladder order: m-base, base-M3T, then M3T-fixed at the mean ratio
        // of the TGDM trajectory, then TGDM itself.
        let head = [Variant::MBase, Variant::base_m3t(), Variant::Tgdm];
        let entries =
            run_baseline_suite(&source, &target, &split, &cfg.train, &eval_cfg, &head)?;
        let mut failures = Vec::new();
        let mut tgdm_lambda_mean = None;
        let mut by_tag = Vec::new();
        for entry in entries {
            match entry.outcome {
                Ok((result, report)) => {
                    if entry.variant == Variant::Tgdm {
                        tgdm_lambda_mean =
                            Some(lambda_trajectory_stats(&result.log)?.mean);
                    }
                    by_tag.push(report);
                }
                Err(e) => failures.push(format!("{}: {e}", entry.variant.tag())),
            }
        }
        if let Some(mean) = tgdm_lambda_mean {
            let fixed = [Variant::M3TFixed { lambda: mean }];
            let entries =
                run_baseline_suite(&source, &target, &split, &cfg.train, &eval_cfg, &fixed)?;
            for entry in entries {
                match entry.outcome {
                    Ok((_, report)) => by_tag.push(report),
                    Err(e) => failures.push(format!("{}: {e}", entry.variant.tag())),
                }
            }
        }
        // Report in ladder order.
        for tag in ["m-base", "base-m3t", "m3t-fixed", "tgdm"] {
            if let Some(report) = by_tag.iter().find(|r| r.method == tag) {
                reports.push(report.clone());
            }
        }
        if !failures.is_empty() {
            for failure in &failures {
                eprintln!("suite failure: {failure}");
            }
            write_reports(&reports, &out_path)?;
            return Err(CliError::Runtime(format!(
                "{} suite variant(s) failed",
                failures.len()
            )));
        }
    } else {
        let checkpoint_path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required without --suite".into()))?;
        let params = load_checkpoint(checkpoint_path)?;
        let model_cfg = ModelConfig::infer(&params)?;
        let model = Mixup3TParams::from_params(model_cfg, &params)?;
        if model_cfg.n_way != eval_cfg.n_way {
            eval_cfg.n_way = model_cfg.n_way;
        }
        let digest = config_digest(&format!("{:?}|{eval_cfg:?}", cfg.to_config_text()));
        reports.push(evaluate_accuracy(
            &model,
            &novel,
            &eval_cfg,
            cfg.train.variant.tag(),
            &digest,
        )?);
    }

    write_reports(&reports, &out_path)?;
    for report in &reports {
        println!("{}", report.to_json_line());
    }
    eprintln!("wrote {}", out_path.display());
    Ok(())
}

fn write_reports(reports: &[EvalReport], path: &std::path::Path) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)?;
    for report in reports {
        writeln!(file, "{}", report.to_json_line())?;
    }
    Ok(())
}
