//! Shared fixtures for the engine benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use tgdm_core::data::{
    generate_synthetic_domain, make_splits, sample_episode, DomainDataset, DomainShiftSpec,
    Episode, SampleAlignment, SplitConfig, SplitSpec,
};
use tgdm_core::model::{DrgnParams, Mixup3TParams};
use tgdm_core::train::{TrainConfig, Variant};

pub struct Fixture {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub split: SplitSpec,
    pub cfg: TrainConfig,
    pub model: Mixup3TParams,
    pub drgn: DrgnParams,
    pub e_s: Episode,
    pub e_t: Episode,
    pub e_val: Episode,
    pub alignment: SampleAlignment,
}

/// Production-shaped world: d=16, 5-way 1-shot episodes.
pub fn fixture() -> Fixture {
    let spread = DomainShiftSpec { rotation_deg: 0.0, translation: 0.0, spread: 0.5 };
    let shift = DomainShiftSpec { rotation_deg: 45.0, translation: 2.5, spread: 0.5 };
    let source = generate_synthetic_domain("src", 10, 20, 50, 16, &spread).unwrap();
    let target = generate_synthetic_domain("tgt", 11, 12, 40, 16, &shift).unwrap();
    let split = make_splits(
        &source,
        &target,
        &SplitConfig {
            aux_classes: 5,
            novel_classes: 7,
            aux_cap_per_class: Some(5),
            seed: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = TrainConfig {
        n_way: 5,
        k_shot: 1,
        n_query: 4,
        seed: 1,
        log_every: 0,
        variant: Variant::Tgdm,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let model = Mixup3TParams::init(cfg.model_config(16), &mut rng);
    let drgn = DrgnParams::init(cfg.drgn_config(), &mut rng);
    let base = source.restrict(&split.source_base, None).unwrap();
    let aux = target.restrict(&split.aux_target, split.aux_cap_per_class).unwrap();
    let e_s = sample_episode(&base, &base.class_names(), 5, 1, 4, &mut rng).unwrap();
    let e_t = sample_episode(&aux, &aux.class_names(), 5, 1, 4, &mut rng).unwrap();
    let e_val = sample_episode(&aux, &aux.class_names(), 5, 1, 4, &mut rng).unwrap();
    let alignment = SampleAlignment::sample(&mut rng, 5, 1, 4);
    Fixture { source, target, split, cfg, model, drgn, e_s, e_t, e_val, alignment }
}
