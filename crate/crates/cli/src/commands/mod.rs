//! Subcommand implementations.

pub mod eval;
pub mod gen_data;
pub mod plot;
pub mod train;

use std::path::Path;

use tgdm_core::data::{
    generate_synthetic_domain, load_dataset, make_splits, DomainDataset, DomainShiftSpec,
    SplitSpec,
};
use tgdm_core::ParamSet;

use crate::config::{parse_config, DataSource, RunConfig};
use crate::CliError;

/// Configuration-class failures exit with code 1.
fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub(crate) fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Materialize the two domains named by the config.
pub(crate) fn resolve_datasets(cfg: &RunConfig) -> Result<(DomainDataset, DomainDataset), CliError> {
    match &cfg.data {
        DataSource::Dirs { source_dir, target_dir } => {
            let source = load_dataset(source_dir)?;
            let target = load_dataset(target_dir)?;
            Ok((source, target))
        }
        DataSource::Synthetic { seed, classes_source, classes_target, per_class, dim, shift } => {
            let zero_gap =
                DomainShiftSpec { rotation_deg: 0.0, translation: 0.0, spread: shift.spread };
            let source =
                generate_synthetic_domain("source", *seed, *classes_source, *per_class, *dim, &zero_gap)
                    .map_err(config_err)?;
            let target = generate_synthetic_domain(
                "target",
                seed.wrapping_add(1),
                *classes_target,
                *per_class,
                *dim,
                shift,
            )
            .map_err(config_err)?;
            Ok((source, target))
        }
    }
}

pub(crate) fn resolve_split(
    cfg: &RunConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<SplitSpec, CliError> {
    make_splits(source, target, &cfg.split).map_err(config_err)
}

/// Model and ratio-network parameters share one checkpoint container; the
/// name prefixes keep them apart.
pub(crate) fn merged_params(model: &ParamSet, drgn: &ParamSet) -> ParamSet {
    let mut merged = model.clone();
    merged.extend(drgn.clone());
    merged
}
