//! N-way k-shot episodes and pairwise class mixing.

use rand::seq::SliceRandom;
use rand::Rng;

use super::DomainDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One self-contained N-way k-shot task. Rows are class-major: the first
/// `k` (resp. `n_query`) rows belong to relabeled class 0, and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub support: Tensor,
    pub query: Tensor,
    pub support_labels: Vec<usize>,
    pub query_labels: Vec<usize>,
    /// Original class name behind each relabeled index.
    pub class_origin: Vec<String>,
    pub domain_id: String,
}

impl Episode {
    pub fn feature_dim(&self) -> usize {
        self.support.cols()
    }

    fn same_layout(&self, other: &Episode) -> bool {
        self.n_way == other.n_way
            && self.k_shot == other.k_shot
            && self.n_query == other.n_query
            && self.feature_dim() == other.feature_dim()
    }
}

/// Mixed intermediate-domain episode with hard pair labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedEpisode {
    pub q_mix: Tensor,
    pub s_mix: Tensor,
    pub support_labels: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub lambda_used: f64,
    /// (source class, target class) behind each mixed label.
    pub pairing: Vec<(String, String)>,
}

/// Per-class sample permutations aligning the two sides of a mix. Support
/// and query roles are shuffled independently.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleAlignment {
    pub support_src: Vec<Vec<usize>>,
    pub support_tgt: Vec<Vec<usize>>,
    pub query_src: Vec<Vec<usize>>,
    pub query_tgt: Vec<Vec<usize>>,
}

impl SampleAlignment {
    pub fn sample(rng: &mut impl Rng, n_way: usize, k_shot: usize, n_query: usize) -> Self {
        let mut perms = |count: usize| -> Vec<Vec<usize>> {
            (0..n_way)
                .map(|_| {
                    let mut p: Vec<usize> = (0..count).collect();
                    p.shuffle(rng);
                    p
                })
                .collect()
        };
        SampleAlignment {
            support_src: perms(k_shot),
            support_tgt: perms(k_shot),
            query_src: perms(n_query),
            query_tgt: perms(n_query),
        }
    }

    /// Identity alignment (j-th sample with j-th sample).
    pub fn identity(n_way: usize, k_shot: usize, n_query: usize) -> Self {
        let perms = |count: usize| -> Vec<Vec<usize>> {
            (0..n_way).map(|_| (0..count).collect()).collect()
        };
        SampleAlignment {
            support_src: perms(k_shot),
            support_tgt: perms(k_shot),
            query_src: perms(n_query),
            query_tgt: perms(n_query),
        }
    }
}

/// Episode tensors reordered so that row r of the source side mixes with
/// row r of the target side. Mixing is then a plain convex combination.
#[derive(Clone, Debug)]
pub struct AlignedPair {
    pub q_src: Tensor,
    pub q_tgt: Tensor,
    pub s_src: Tensor,
    pub s_tgt: Tensor,
    pub support_labels: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub pairing: Vec<(String, String)>,
}

/// Sample an N-way k-shot episode: N classes without replacement, then
/// k + n_query distinct samples per class, relabeled 0..N in sampling order.
pub fn sample_episode(
    dataset: &DomainDataset,
    classes: &[String],
    n_way: usize,
    k_shot: usize,
    n_query: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 || n_query == 0 {
        return Err(Error::InvalidArgument(format!(
            "episode shape must be positive: N={n_way}, k={k_shot}, n_q={n_query}"
        )));
    }
    if classes.len() < n_way {
        return Err(Error::InvalidArgument(format!(
            "insufficient classes: need {n_way}, have {}",
            classes.len()
        )));
    }

    let chosen = rand::seq::index::sample(rng, classes.len(), n_way);
    let d = dataset.feature_dim();
    let per_class = k_shot + n_query;

    let mut support = Vec::with_capacity(n_way * k_shot * d);
    let mut query = Vec::with_capacity(n_way * n_query * d);
    let mut class_origin = Vec::with_capacity(n_way);

    for class_idx in chosen.iter() {
        let name = &classes[class_idx];
        let samples = dataset.class(name)?;
        if samples.rows() < per_class {
            return Err(Error::InvalidArgument(format!(
                "insufficient samples: class `{name}` has {}, episode needs {per_class}",
                samples.rows()
            )));
        }
        let picks = rand::seq::index::sample(rng, samples.rows(), per_class);
        for (slot, row) in picks.iter().enumerate() {
            let dst = if slot < k_shot { &mut support } else { &mut query };
            dst.extend_from_slice(samples.row(row));
        }
        class_origin.push(name.clone());
    }

    let support_labels: Vec<usize> =
        (0..n_way).flat_map(|c| std::iter::repeat(c).take(k_shot)).collect();
    let query_labels: Vec<usize> =
        (0..n_way).flat_map(|c| std::iter::repeat(c).take(n_query)).collect();

    Ok(Episode {
        n_way,
        k_shot,
        n_query,
        support: Tensor::from_vec(&[n_way * k_shot, d], support)?,
        query: Tensor::from_vec(&[n_way * n_query, d], query)?,
        support_labels,
        query_labels,
        class_origin,
        domain_id: dataset.domain_id().to_string(),
    })
}

fn reorder(rows: &Tensor, n_way: usize, per_class: usize, perms: &[Vec<usize>]) -> Tensor {
    let d = rows.cols();
    let mut data = Vec::with_capacity(rows.len());
    for (class, perm) in perms.iter().enumerate() {
        for &j in perm {
            data.extend_from_slice(rows.row(class * per_class + j));
        }
    }
    Tensor::from_vec(&[n_way * per_class, d], data).expect("permutation preserves shape")
}

/// Pair classes by relabeled index and reorder samples per `alignment`.
pub fn align_for_mix(
    e_s: &Episode,
    e_t: &Episode,
    alignment: &SampleAlignment,
) -> Result<AlignedPair> {
    if !e_s.same_layout(e_t) {
        return Err(Error::InvalidArgument(format!(
            "episode layouts differ: ({}, {}, {}, d={}) vs ({}, {}, {}, d={})",
            e_s.n_way,
            e_s.k_shot,
            e_s.n_query,
            e_s.feature_dim(),
            e_t.n_way,
            e_t.k_shot,
            e_t.n_query,
            e_t.feature_dim()
        )));
    }
    let n = e_s.n_way;
    let pairing = e_s
        .class_origin
        .iter()
        .zip(&e_t.class_origin)
        .map(|(s, t)| (s.clone(), t.clone()))
        .collect();
    Ok(AlignedPair {
        q_src: reorder(&e_s.query, n, e_s.n_query, &alignment.query_src),
        q_tgt: reorder(&e_t.query, n, e_t.n_query, &alignment.query_tgt),
        s_src: reorder(&e_s.support, n, e_s.k_shot, &alignment.support_src),
        s_tgt: reorder(&e_t.support, n, e_t.k_shot, &alignment.support_tgt),
        support_labels: e_s.support_labels.clone(),
        query_labels: e_s.query_labels.clone(),
        pairing,
    })
}

fn convex_mix(a: &Tensor, b: &Tensor, lambda: f64) -> Tensor {
    let one_minus = 1.0 - lambda;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * lambda + y * one_minus)
        .collect();
    Tensor::from_vec(a.shape(), data).expect("same shapes")
}

/// Mix an aligned pair at a fixed ratio. The exact expression
/// `a * lambda + b * (1 - lambda)` matches the in-graph mixing used by the
/// trainer bit for bit.
pub fn mix_aligned(pair: &AlignedPair, lambda: f64) -> Result<MixedEpisode> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda={lambda} outside [0, 1]")));
    }
    Ok(MixedEpisode {
        q_mix: convex_mix(&pair.q_src, &pair.q_tgt, lambda),
        s_mix: convex_mix(&pair.s_src, &pair.s_tgt, lambda),
        support_labels: pair.support_labels.clone(),
        query_labels: pair.query_labels.clone(),
        lambda_used: lambda,
        pairing: pair.pairing.clone(),
    })
}

/// Build the intermediate-domain episode: classes paired by relabeled index,
/// per-class sample alignment drawn from `rng`, queries mixed with queries
/// and supports with supports at ratio `lambda`.
pub fn mix_episodes(
    e_s: &Episode,
    e_t: &Episode,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<MixedEpisode> {
    let alignment = SampleAlignment::sample(rng, e_s.n_way, e_s.k_shot, e_s.n_query);
    let pair = align_for_mix(e_s, e_t, &alignment)?;
    mix_aligned(&pair, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_domain, DomainShiftSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn toy_domain(id: &str, seed: u64) -> DomainDataset {
        generate_synthetic_domain(id, seed, 6, 25, 4, &DomainShiftSpec::identity()).unwrap()
    }

    fn episode(ds: &DomainDataset, seed: u64, n: usize, k: usize, q: usize) -> Episode {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        sample_episode(ds, &ds.class_names(), n, k, q, &mut rng).unwrap()
    }

    #[test]
    fn five_way_one_shot_shapes() {
        let ds = toy_domain("src", 1);
        let ep = episode(&ds, 9, 5, 1, 15);
        assert_eq!(ep.support.shape(), &[5, 4]);
        assert_eq!(ep.query.shape(), &[75, 4]);
        assert_eq!(ep.query_labels.iter().filter(|&&l| l == 3).count(), 15);
    }

    #[test]
    fn one_way_all_labels_zero() {
        let ds = toy_domain("src", 1);
        let ep = episode(&ds, 2, 1, 3, 4);
        assert!(ep.support_labels.iter().all(|&l| l == 0));
        assert!(ep.query_labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn deterministic_for_fixed_rng() {
        let ds = toy_domain("src", 1);
        assert_eq!(episode(&ds, 5, 3, 2, 4), episode(&ds, 5, 3, 2, 4));
    }

    #[test]
    fn support_and_query_rows_are_disjoint() {
        let ds = toy_domain("src", 3);
        let ep = episode(&ds, 11, 4, 3, 5);
        for c in 0..4 {
            for si in 0..3 {
                let srow = ep.support.row(c * 3 + si);
                for qi in 0..5 {
                    assert_ne!(srow, ep.query.row(c * 5 + qi));
                }
            }
        }
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        let ds = toy_domain("src", 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let err = sample_episode(&ds, &ds.class_names(), 3, 10, 20, &mut rng).unwrap_err();
        assert!(err.to_string().contains("insufficient samples"), "{err}");
    }

    #[test]
    fn lambda_endpoints_reproduce_parents() {
        let src = toy_domain("src", 1);
        let tgt = toy_domain("tgt", 2);
        let e_s = episode(&src, 5, 3, 2, 4);
        let e_t = episode(&tgt, 6, 3, 2, 4);
        let align = SampleAlignment::identity(3, 2, 4);
        let pair = align_for_mix(&e_s, &e_t, &align).unwrap();
        let at_one = mix_aligned(&pair, 1.0).unwrap();
        assert_eq!(at_one.q_mix, e_s.query);
        assert_eq!(at_one.s_mix, e_s.support);
        let at_zero = mix_aligned(&pair, 0.0).unwrap();
        assert_eq!(at_zero.q_mix, e_t.query);
        assert_eq!(at_zero.s_mix, e_t.support);
    }

    #[test]
    fn midpoint_arithmetic() {
        let src = toy_domain("src", 1);
        let tgt = toy_domain("tgt", 2);
        let e_s = episode(&src, 5, 2, 1, 2);
        let e_t = episode(&tgt, 6, 2, 1, 2);
        let align = SampleAlignment::identity(2, 1, 2);
        let pair = align_for_mix(&e_s, &e_t, &align).unwrap();
        let mid = mix_aligned(&pair, 0.5).unwrap();
        for (m, (a, b)) in mid
            .q_mix
            .data()
            .iter()
            .zip(pair.q_src.data().iter().zip(pair.q_tgt.data()))
        {
            assert!((m - 0.5 * (a + b)).abs() < 1e-15);
        }
    }

    #[test]
    fn n_mixed_classes_labeled_zero_to_n() {
        let src = toy_domain("src", 1);
        let tgt = toy_domain("tgt", 2);
        let e_s = episode(&src, 5, 5, 1, 3);
        let e_t = episode(&tgt, 6, 5, 1, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mixed = mix_episodes(&e_s, &e_t, 0.4, &mut rng).unwrap();
        assert_eq!(mixed.pairing.len(), 5);
        let mut labels = mixed.query_labels.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let src = toy_domain("src", 1);
        let tgt = toy_domain("tgt", 2);
        let e_s = episode(&src, 5, 3, 2, 4);
        let e_t = episode(&tgt, 6, 3, 2, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert!(mix_episodes(&e_s, &e_t, 0.5, &mut rng).is_err());
    }

    #[test]
    fn mix_is_symmetric_under_role_swap() {
        let src = toy_domain("src", 1);
        let tgt = toy_domain("tgt", 2);
        let e_s = episode(&src, 5, 3, 2, 4);
        let e_t = episode(&tgt, 6, 3, 2, 4);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let align = SampleAlignment::sample(&mut rng, 3, 2, 4);
        let swapped = SampleAlignment {
            support_src: align.support_tgt.clone(),
            support_tgt: align.support_src.clone(),
            query_src: align.query_tgt.clone(),
            query_tgt: align.query_src.clone(),
        };
        let lambda = 0.3;
        let fwd = mix_aligned(&align_for_mix(&e_s, &e_t, &align).unwrap(), lambda).unwrap();
        let rev =
            mix_aligned(&align_for_mix(&e_t, &e_s, &swapped).unwrap(), 1.0 - lambda).unwrap();
        for (a, b) in fwd.q_mix.data().iter().zip(rev.q_mix.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (a, b) in fwd.s_mix.data().iter().zip(rev.s_mix.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
