//! Domain datasets, disjoint splits, and episodic sampling.

mod episode;
mod fmat;
mod synthetic;

pub use episode::{
    align_for_mix, mix_aligned, mix_episodes, sample_episode, AlignedPair, Episode,
    MixedEpisode, SampleAlignment,
};
pub use fmat::{load_dataset, save_dataset};
pub use synthetic::{generate_synthetic_domain, rotate_pairs, DomainShiftSpec};

use indexmap::IndexMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A labeled feature-vector domain: ordered classes, each a `[rows, d]`
/// sample matrix. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    domain_id: String,
    feature_dim: usize,
    classes: IndexMap<String, Tensor>,
}

impl DomainDataset {
    pub fn new(domain_id: impl Into<String>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        Ok(DomainDataset {
            domain_id: domain_id.into(),
            feature_dim,
            classes: IndexMap::new(),
        })
    }

    pub fn insert_class(&mut self, name: impl Into<String>, samples: Tensor) -> Result<()> {
        let name = name.into();
        if samples.rank() != 2 || samples.cols() != self.feature_dim {
            return Err(Error::data(
                None,
                format!(
                    "class `{name}`: samples shape {:?} does not match feature_dim {}",
                    samples.shape(),
                    self.feature_dim
                ),
            ));
        }
        if self.classes.contains_key(&name) {
            return Err(Error::data(None, format!("duplicate class `{name}`")));
        }
        self.classes.insert(name, samples);
        Ok(())
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.keys().cloned().collect()
    }

    pub fn class(&self, name: &str) -> Result<&Tensor> {
        self.classes
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("class `{name}` not in dataset")))
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_samples(&self) -> usize {
        self.classes.values().map(|t| t.rows()).sum()
    }

    /// View restricted to `names`, optionally keeping only the first
    /// `max_per_class` samples of each class (the auxiliary budget cap).
    pub fn restrict(&self, names: &[String], max_per_class: Option<usize>) -> Result<Self> {
        let mut out = DomainDataset::new(self.domain_id.clone(), self.feature_dim)?;
        for name in names {
            let samples = self.class(name)?;
            let keep = match max_per_class {
                Some(cap) => samples.rows().min(cap),
                None => samples.rows(),
            };
            if keep == 0 {
                return Err(Error::data(None, format!("class `{name}` capped to zero samples")));
            }
            let view = Tensor::from_vec(
                &[keep, self.feature_dim],
                samples.data()[..keep * self.feature_dim].to_vec(),
            )?;
            out.insert_class(name.clone(), view)?;
        }
        Ok(out)
    }
}

/// How to carve source and target into the three training-protocol subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    /// Number of target classes reserved as labeled auxiliary training data.
    pub aux_classes: usize,
    /// Number of target classes held out as novel test classes.
    pub novel_classes: usize,
    /// Per-class sample cap on auxiliary data, enforcing M_S >> M_aux.
    pub aux_cap_per_class: Option<usize>,
    /// Seed for the target-class shuffle.
    pub seed: u64,
    /// Explicit auxiliary class list; overrides the count-based partition.
    pub aux_list: Option<Vec<String>>,
    /// Explicit novel class list; overrides the count-based partition.
    pub novel_list: Option<Vec<String>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        // Few labeled target classes for training, the rest held out.
        SplitConfig {
            aux_classes: 3,
            novel_classes: 7,
            aux_cap_per_class: Some(20),
            seed: 0,
            aux_list: None,
            novel_list: None,
        }
    }
}

/// Disjoint class lists for source base, auxiliary target, and target novel.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub source_base: Vec<String>,
    pub aux_target: Vec<String>,
    pub target_novel: Vec<String>,
    pub aux_cap_per_class: Option<usize>,
}

impl SplitSpec {
    pub fn is_disjoint(&self) -> bool {
        let sets: [std::collections::HashSet<&str>; 3] = [
            self.source_base.iter().map(String::as_str).collect(),
            self.aux_target.iter().map(String::as_str).collect(),
            self.target_novel.iter().map(String::as_str).collect(),
        ];
        sets[0].is_disjoint(&sets[1])
            && sets[0].is_disjoint(&sets[2])
            && sets[1].is_disjoint(&sets[2])
    }
}

/// Partition target classes into auxiliary and novel subsets, keeping all
/// source classes as the base set. The auxiliary sample budget must stay
/// strictly below the source budget.
pub fn make_splits(
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &SplitConfig,
) -> Result<SplitSpec> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let source_base = source.class_names();

    let (aux_target, target_novel) = match (&cfg.aux_list, &cfg.novel_list) {
        (Some(aux), Some(novel)) => {
            for name in aux.iter().chain(novel) {
                target.class(name)?;
            }
            let overlap: Vec<&String> = aux.iter().filter(|n| novel.contains(n)).collect();
            if !overlap.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "aux and novel class lists overlap: {overlap:?}"
                )));
            }
            (aux.clone(), novel.clone())
        }
        (None, None) => {
            let need = cfg.aux_classes + cfg.novel_classes;
            if target.n_classes() < need {
                return Err(Error::InvalidArgument(format!(
                    "insufficient target classes: need {} aux + {} novel = {need}, have {}",
                    cfg.aux_classes,
                    cfg.novel_classes,
                    target.n_classes()
                )));
            }
            if cfg.aux_classes == 0 || cfg.novel_classes == 0 {
                return Err(Error::InvalidArgument(
                    "aux_classes and novel_classes must be positive".into(),
                ));
            }
            let mut names = target.class_names();
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.seed);
            names.shuffle(&mut rng);
            let aux = names[..cfg.aux_classes].to_vec();
            let novel = names[cfg.aux_classes..need].to_vec();
            (aux, novel)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "aux_list and novel_list must be given together".into(),
            ))
        }
    };

    let spec = SplitSpec {
        source_base,
        aux_target,
        target_novel,
        aux_cap_per_class: cfg.aux_cap_per_class,
    };
    if !spec.is_disjoint() {
        return Err(Error::InvalidArgument(
            "source, aux and novel class lists must be pairwise disjoint".into(),
        ));
    }

    let m_source: usize = spec
        .source_base
        .iter()
        .map(|n| source.class(n).map(|t| t.rows()).unwrap_or(0))
        .sum();
    let m_aux: usize = spec
        .aux_target
        .iter()
        .map(|n| {
            let rows = target.class(n).map(|t| t.rows()).unwrap_or(0);
            match cfg.aux_cap_per_class {
                Some(cap) => rows.min(cap),
                None => rows,
            }
        })
        .sum();
    if m_source <= m_aux {
        return Err(Error::InvalidArgument(format!(
            "source budget must exceed auxiliary budget: M_S={m_source} <= M_aux={m_aux}"
        )));
    }

    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(id: &str, classes: usize, rows: usize, d: usize) -> DomainDataset {
        let mut ds = DomainDataset::new(id, d).unwrap();
        for c in 0..classes {
            let data: Vec<f64> = (0..rows * d).map(|i| (c * 1000 + i) as f64).collect();
            ds.insert_class(
                format!("{id}-c{c:02}"),
                Tensor::from_vec(&[rows, d], data).unwrap(),
            )
            .unwrap();
        }
        ds
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let source = toy_dataset("src", 12, 30, 4);
        let target = toy_dataset("tgt", 10, 30, 4);
        let cfg = SplitConfig { aux_classes: 3, novel_classes: 7, ..Default::default() };
        let spec = make_splits(&source, &target, &cfg).unwrap();
        assert_eq!(spec.aux_target.len(), 3);
        assert_eq!(spec.target_novel.len(), 7);
        assert!(spec.is_disjoint());
    }

    #[test]
    fn explicit_overlapping_lists_are_rejected() {
        let source = toy_dataset("src", 12, 30, 4);
        let target = toy_dataset("tgt", 10, 30, 4);
        let cfg = SplitConfig {
            aux_list: Some(vec!["tgt-c00".into(), "tgt-c01".into()]),
            novel_list: Some(vec!["tgt-c01".into(), "tgt-c02".into()]),
            ..Default::default()
        };
        let err = make_splits(&source, &target, &cfg).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn shortfall_is_named() {
        let source = toy_dataset("src", 12, 30, 4);
        let target = toy_dataset("tgt", 5, 30, 4);
        let cfg = SplitConfig { aux_classes: 3, novel_classes: 7, ..Default::default() };
        let err = make_splits(&source, &target, &cfg).unwrap_err();
        assert!(err.to_string().contains("insufficient target classes"), "{err}");
    }

    #[test]
    fn aux_budget_must_stay_below_source() {
        let source = toy_dataset("src", 1, 10, 4);
        let target = toy_dataset("tgt", 10, 30, 4);
        let cfg = SplitConfig {
            aux_classes: 3,
            novel_classes: 7,
            aux_cap_per_class: None,
            ..Default::default()
        };
        let err = make_splits(&source, &target, &cfg).unwrap_err();
        assert!(err.to_string().contains("M_S"), "{err}");
    }

    #[test]
    fn restrict_caps_samples() {
        let ds = toy_dataset("tgt", 3, 30, 4);
        let names = ds.class_names();
        let capped = ds.restrict(&names[..2], Some(5)).unwrap();
        assert_eq!(capped.n_classes(), 2);
        assert_eq!(capped.class(&names[0]).unwrap().rows(), 5);
        // First rows are preserved verbatim.
        assert_eq!(
            capped.class(&names[0]).unwrap().row(0),
            ds.class(&names[0]).unwrap().row(0)
        );
    }
}
