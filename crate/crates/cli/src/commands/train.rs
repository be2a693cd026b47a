//! `tgdm train`: run the configured variant, streaming the CSV log and
//! writing checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};

use tgdm_core::model::save_checkpoint;
use tgdm_core::train::{train_with_hook, Variant, CSV_HEADER};

use crate::commands::{load_run_config, merged_params, resolve_datasets, resolve_split};
use crate::config::parse_variant;
use crate::{CliError, TrainArgs};

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(variant) = &args.variant {
        cfg.train.variant = parse_variant(variant).map_err(CliError::Usage)?;
    }
    if let Some(lambda) = args.lambda {
        match cfg.train.variant {
            Variant::M3TFixed { .. } => cfg.train.variant = Variant::M3TFixed { lambda },
            _ => {
                return Err(CliError::Usage(
                    "--lambda requires --variant m3t-fixed (or variant = m3t-fixed in config)"
                        .into(),
                ))
            }
        }
    }
    if let Some(iterations) = args.iterations {
        cfg.train.iterations = iterations;
    }
    if let Some(out_dir) = &args.out_dir {
        cfg.out_dir = out_dir.clone();
    }
    cfg.train.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;

    let (source, target) = resolve_datasets(&cfg)?;
    let split = resolve_split(&cfg, &source, &target)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join("log.csv");
    let mut csv = BufWriter::new(File::create(&log_path)?);
    writeln!(csv, "{CSV_HEADER}")?;

    let checkpoint_every = cfg.checkpoint_every;
    let out_dir = cfg.out_dir.clone();
    let result = train_with_hook(&source, &target, &split, &cfg.train, |row, model, drgn| {
        writeln!(csv, "{}", row.to_csv_row()).map_err(tgdm_core::Error::Io)?;
        if let Some(every) = checkpoint_every {
            if every > 0 && (row.iteration + 1) % every == 0 {
                let path = out_dir.join(format!("checkpoint_{:06}.tgdm", row.iteration + 1));
                save_checkpoint(&merged_params(model.params(), drgn.params()), &path)?;
            }
        }
        Ok(())
    })?;
    csv.flush()?;

    let final_path = cfg.out_dir.join("checkpoint_final.tgdm");
    save_checkpoint(
        &merged_params(result.model.params(), result.drgn.params()),
        &final_path,
    )?;

    let last = result.log.last().expect("at least one iteration");
    println!(
        "trained {} for {} iterations: L_FSL={:.4} L_Tval={:.4} lambda={:.4}",
        cfg.train.variant.tag(),
        result.log.len(),
        last.loss_fsl,
        last.loss_tval,
        last.lambda
    );
    println!("log:        {}", log_path.display());
    println!("checkpoint: {}", final_path.display());
    Ok(())
}
