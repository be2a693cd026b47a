//! Per-iteration training records and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iter,lambda_hat,lambda,loss_s,loss_t,loss_mix,loss_fsl,loss_tval,ms";

/// One training iteration: the pre-update ratio, the regenerated ratio, the
/// tri-task loss and its parts, the validation loss carried to the next
/// iteration, and wall-clock duration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub lambda_hat: f64,
    pub lambda: f64,
    pub loss_s: f64,
    pub loss_t: f64,
    pub loss_mix: f64,
    pub loss_fsl: f64,
    pub loss_tval: f64,
    pub ms: f64,
}

impl IterationLog {
    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        // `{}` prints the shortest representation that round-trips, so a
        // parsed log compares equal to the in-memory one.
        write!(
            row,
            "{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.lambda_hat,
            self.lambda,
            self.loss_s,
            self.loss_t,
            self.loss_mix,
            self.loss_fsl,
            self.loss_tval,
            self.ms
        )
        .expect("write to string");
        row
    }
}

pub fn to_csv(log: &[IterationLog]) -> String {
    let mut out = String::with_capacity(64 * (log.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn write_csv(log: &[IterationLog], path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(log))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<IterationLog>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim() == CSV_HEADER => {}
        Some(header) => {
            return Err(Error::data(
                None,
                format!("unexpected CSV header `{header}` (expected `{CSV_HEADER}`)"),
            ))
        }
        None => return Err(Error::data(None, "empty CSV")),
    }
    let mut log = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::data(
                None,
                format!("row {}: expected 9 fields, found {}", lineno + 2, fields.len()),
            ));
        }
        let parse = |idx: usize| -> Result<f64> {
            fields[idx].trim().parse::<f64>().map_err(|_| {
                Error::data(
                    None,
                    format!("row {}: field {} `{}` is not a number", lineno + 2, idx, fields[idx]),
                )
            })
        };
        log.push(IterationLog {
            iteration: parse(0)? as usize,
            lambda_hat: parse(1)?,
            lambda: parse(2)?,
            loss_s: parse(3)?,
            loss_t: parse(4)?,
            loss_mix: parse(5)?,
            loss_fsl: parse(6)?,
            loss_tval: parse(7)?,
            ms: parse(8)?,
        });
    }
    Ok(log)
}

pub fn read_csv(path: &Path) -> Result<Vec<IterationLog>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text).map_err(|e| match e {
        Error::DataFormat { detail, .. } => Error::data(Some(path), detail),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> IterationLog {
        IterationLog {
            iteration: i,
            lambda_hat: 0.5 + i as f64 * 1e-3,
            lambda: 0.49,
            loss_s: 1.609_437_912_434_100_3,
            loss_t: 1.2,
            loss_mix: 0.9,
            loss_fsl: 1.05,
            loss_tval: 1.11,
            ms: 12.75,
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let log = vec![row(0), row(1), row(2)];
        let parsed = parse_csv(&to_csv(&log)).unwrap();
        assert_eq!(parsed, log);
    }

    #[test]
    fn malformed_row_is_named() {
        let mut text = String::from(CSV_HEADER);
        text.push_str("\n0,0.5,0.5,1,1,1,1,1,2\n1,oops,0.5,1,1,1,1,1,2\n");
        let err = parse_csv(&text).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = parse_csv("a,b,c\n").unwrap_err();
        assert!(err.to_string().contains("unexpected CSV header"), "{err}");
    }
}
