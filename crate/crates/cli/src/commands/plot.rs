//! `tgdm plot`: ratio-trajectory and loss-curve files from a training log,
//! as SVG polylines plus downsampled CSV extracts.

use std::fmt::Write as _;

use tgdm_core::train::{read_csv, IterationLog};

use crate::plot::{downsample, polyline_svg, Series};
use crate::{CliError, PlotArgs};

fn series_points(log: &[IterationLog], pick: impl Fn(&IterationLog) -> f64) -> Vec<(f64, f64)> {
    log.iter().map(|r| (r.iteration as f64, pick(r))).collect()
}

fn csv_text(header: &str, rows: &[(usize, Vec<f64>)]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for (iter, values) in rows {
        let _ = write!(out, "{iter}");
        for v in values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn run(args: &PlotArgs) -> Result<(), CliError> {
    let log = read_csv(&args.log)?;
    if log.is_empty() {
        return Err(CliError::Runtime(format!(
            "log {} has a header but no rows",
            args.log.display()
        )));
    }
    std::fs::create_dir_all(&args.out_dir)?;

    // Ratio trajectory.
    let trajectory = [
        Series {
            label: "lambda_hat",
            color: "#ff7f0e",
            points: series_points(&log, |r| r.lambda_hat),
        },
        Series { label: "lambda", color: "#1f77b4", points: series_points(&log, |r| r.lambda) },
    ];
    let svg = polyline_svg("target-guided mix ratio", "iteration", "ratio", &trajectory);
    let svg_path = args.out_dir.join("lambda_trajectory.svg");
    std::fs::write(&svg_path, svg)?;

    let lambda_rows: Vec<(usize, Vec<f64>)> =
        log.iter().map(|r| (r.iteration, vec![r.lambda_hat, r.lambda])).collect();
    let lambda_csv = csv_text("iter,lambda_hat,lambda", &downsample(&lambda_rows, args.points));
    let lambda_csv_path = args.out_dir.join("lambda_trajectory.csv");
    std::fs::write(&lambda_csv_path, lambda_csv)?;

    // Loss curves.
    let losses = [
        ("loss_s", "#1f77b4"),
        ("loss_t", "#ff7f0e"),
        ("loss_mix", "#2ca02c"),
        ("loss_fsl", "#d62728"),
        ("loss_tval", "#9467bd"),
    ];
    let pickers: [fn(&IterationLog) -> f64; 5] = [
        |r| r.loss_s,
        |r| r.loss_t,
        |r| r.loss_mix,
        |r| r.loss_fsl,
        |r| r.loss_tval,
    ];
    let loss_series: Vec<Series> = losses
        .iter()
        .zip(pickers)
        .map(|((label, color), pick)| Series {
            label,
            color,
            points: series_points(&log, pick),
        })
        .collect();
    let svg = polyline_svg("training losses", "iteration", "loss", &loss_series);
    let losses_svg_path = args.out_dir.join("losses.svg");
    std::fs::write(&losses_svg_path, svg)?;

    let loss_rows: Vec<(usize, Vec<f64>)> = log
        .iter()
        .map(|r| (r.iteration, vec![r.loss_s, r.loss_t, r.loss_mix, r.loss_fsl, r.loss_tval]))
        .collect();
    let loss_csv = csv_text(
        "iter,loss_s,loss_t,loss_mix,loss_fsl,loss_tval",
        &downsample(&loss_rows, args.points),
    );
    let losses_csv_path = args.out_dir.join("losses.csv");
    std::fs::write(&losses_csv_path, loss_csv)?;

    for path in [&svg_path, &lambda_csv_path, &losses_svg_path, &losses_csv_path] {
        println!("wrote {}", path.display());
    }
    Ok(())
}
