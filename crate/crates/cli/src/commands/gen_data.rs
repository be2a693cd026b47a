//! `tgdm gen-data`: write a synthetic source/target dataset pair.

use tgdm_core::data::{generate_synthetic_domain, save_dataset, DomainShiftSpec};

use crate::{CliError, GenDataArgs};

pub fn run(args: &GenDataArgs) -> Result<(), CliError> {
    let source_shift =
        DomainShiftSpec { rotation_deg: 0.0, translation: 0.0, spread: args.spread };
    let target_shift = DomainShiftSpec {
        rotation_deg: args.rotation,
        translation: args.translation,
        spread: args.spread,
    };
    let target_classes = args.target_classes.unwrap_or(args.classes);

    let source = generate_synthetic_domain(
        "source",
        args.seed,
        args.classes,
        args.per_class,
        args.dim,
        &source_shift,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let target = generate_synthetic_domain(
        "target",
        args.seed.wrapping_add(1),
        target_classes,
        args.per_class,
        args.dim,
        &target_shift,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let source_dir = args.out.join("source");
    let target_dir = args.out.join("target");
    save_dataset(&source, &source_dir)?;
    save_dataset(&target, &target_dir)?;

    println!(
        "wrote {} ({} classes x {} samples, d={})",
        source_dir.display(),
        source.n_classes(),
        args.per_class,
        args.dim
    );
    println!(
        "wrote {} ({} classes x {} samples, d={}, rotation={} deg, translation={})",
        target_dir.display(),
        target.n_classes(),
        args.per_class,
        args.dim,
        args.rotation,
        args.translation
    );
    Ok(())
}
