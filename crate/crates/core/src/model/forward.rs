//! Graph builders for the Mixup-3T forward pass, the tri-task loss, the
//! ratio network, and prediction.

use super::{DrgnParams, LossWeights, Mixup3TParams, ModelConfig};
use crate::autodiff::{BoundParams, Graph, NodeId, Tensor};
use crate::data::{Episode, MixedEpisode};
use crate::error::{Error, Result};

/// `x @ w + b`, with the bias row broadcast over rows via a ones column.
fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let rows = g.value(x).rows();
    let xw = g.matmul(x, w)?;
    let ones = g.constant(Tensor::ones(&[rows, 1]));
    let bias = g.matmul(ones, b)?;
    g.add(xw, bias)
}

/// |x| as relu(x) + relu(-x), staying inside the primitive set.
fn abs_node(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let pos = g.relu(x)?;
    let neg = g.scalar_mul(x, -1.0)?;
    let neg_r = g.relu(neg)?;
    g.add(pos, neg_r)
}

/// Two-layer MLP: relu(x W1 + b1) W2 + b2.
pub fn extract_features(g: &mut Graph, params: &BoundParams, x: NodeId) -> Result<NodeId> {
    let w1 = params.get("ext.w1")?;
    let b1 = params.get("ext.b1")?;
    let w2 = params.get("ext.w2")?;
    let b2 = params.get("ext.b2")?;
    let h = affine(g, x, w1, b1)?;
    let h = g.relu(h)?;
    affine(g, h, w2, b2)
}

fn validate_support_labels(n_way: usize, labels: &[usize], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "support has {rows} rows but {} labels",
            labels.len()
        )));
    }
    let mut seen = vec![false; n_way];
    for &l in labels {
        if l >= n_way {
            return Err(Error::InvalidArgument(format!(
                "support label {l} outside [0, {n_way})"
            )));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::InvalidArgument(format!(
            "class {missing} missing from support set"
        )));
    }
    Ok(())
}

/// One-hot encode labels against `n_way` classes.
pub fn one_hot(labels: &[usize], n_way: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_way];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_way {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {n_way})")));
        }
        data[i * n_way + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), n_way], data)
}

/// Message-passing rounds over the fully connected support∪query graph.
/// Returns the final node states and the per-round adjacency nodes.
fn gnn_rounds(
    g: &mut Graph,
    params: &BoundParams,
    cfg: &ModelConfig,
    x0: NodeId,
    m: usize,
) -> Result<(NodeId, Vec<NodeId>)> {
    let mut x = x0;
    let mut adjacencies = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let ew1 = params.get(&format!("cls.r{r}.edge_w1"))?;
        let eb1 = params.get(&format!("cls.r{r}.edge_b1"))?;
        let ew2 = params.get(&format!("cls.r{r}.edge_w2"))?;
        let eb2 = params.get(&format!("cls.r{r}.edge_b2"))?;
        let nw = params.get(&format!("cls.r{r}.node_w"))?;
        let nb = params.get(&format!("cls.r{r}.node_b"))?;

        let diff = g.pair_diff(x)?;
        let dist = abs_node(g, diff)?;
        let hidden = affine(g, dist, ew1, eb1)?;
        let hidden = g.relu(hidden)?;
        let scores = affine(g, hidden, ew2, eb2)?;
        let scores = g.reshape(scores, &[m, m])?;
        let adjacency = g.softmax(scores)?;
        adjacencies.push(adjacency);

        let aggregated = g.matmul(adjacency, x)?;
        let combined = g.concat_cols(x, aggregated)?;
        let updated = affine(g, combined, nw, nb)?;
        x = g.relu(updated)?;
    }
    Ok((x, adjacencies))
}

/// Graph classifier: builds one fully connected graph over support and query
/// feature nodes (label encoding one-hot for support, uniform 1/N for query)
/// and reads N logits off the final query node states.
pub fn gnn_classify(
    g: &mut Graph,
    params: &BoundParams,
    cfg: &ModelConfig,
    query_f: NodeId,
    support_f: NodeId,
    support_labels: &[usize],
) -> Result<NodeId> {
    let (logits, _) = gnn_classify_traced(g, params, cfg, query_f, support_f, support_labels)?;
    Ok(logits)
}

fn gnn_classify_traced(
    g: &mut Graph,
    params: &BoundParams,
    cfg: &ModelConfig,
    query_f: NodeId,
    support_f: NodeId,
    support_labels: &[usize],
) -> Result<(NodeId, Vec<NodeId>)> {
    let n_s = g.value(support_f).rows();
    let n_q = g.value(query_f).rows();
    validate_support_labels(cfg.n_way, support_labels, n_s)?;
    let m = n_s + n_q;

    let features = g.concat_rows(support_f, query_f)?;
    let mut label_enc = one_hot(support_labels, cfg.n_way)?.data().to_vec();
    label_enc.extend(std::iter::repeat(1.0 / cfg.n_way as f64).take(n_q * cfg.n_way));
    let labels = g.constant(Tensor::from_vec(&[m, cfg.n_way], label_enc)?);
    let x0 = g.concat_cols(features, labels)?;

    let (states, adjacencies) = gnn_rounds(g, params, cfg, x0, m)?;
    let query_states = g.slice_rows(states, n_s, m)?;
    let rw = params.get("cls.readout_w")?;
    let rb = params.get("cls.readout_b")?;
    let logits = affine(g, query_states, rw, rb)?;
    Ok((logits, adjacencies))
}

/// Extractor + classifier on raw episode tensors already in the graph.
pub fn episode_logits_nodes(
    g: &mut Graph,
    params: &BoundParams,
    cfg: &ModelConfig,
    support: NodeId,
    query: NodeId,
    support_labels: &[usize],
) -> Result<NodeId> {
    let support_f = extract_features(g, params, support)?;
    let query_f = extract_features(g, params, query)?;
    gnn_classify(g, params, cfg, query_f, support_f, support_labels)
}

/// Mean cross-entropy of the classifier logits against the query labels.
/// This single form serves the source, target, mixed, and validation losses.
pub fn episode_ce_loss_nodes(
    g: &mut Graph,
    params: &BoundParams,
    cfg: &ModelConfig,
    support: NodeId,
    query: NodeId,
    support_labels: &[usize],
    query_labels: &[usize],
) -> Result<NodeId> {
    let n_q = g.value(query).rows();
    if query_labels.len() != n_q {
        return Err(Error::InvalidArgument(format!(
            "query has {n_q} rows but {} labels",
            query_labels.len()
        )));
    }
    let logits = episode_logits_nodes(g, params, cfg, support, query, support_labels)?;
    let targets = g.constant(one_hot(query_labels, cfg.n_way)?);
    g.cross_entropy_logits(logits, targets)
}

/// Numeric wrapper over [`episode_ce_loss_nodes`] for a single episode.
pub fn episode_ce_loss(
    model: &Mixup3TParams,
    support: &Tensor,
    query: &Tensor,
    support_labels: &[usize],
    query_labels: &[usize],
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let s = g.constant(support.clone());
    let q = g.constant(query.clone());
    let loss = episode_ce_loss_nodes(
        &mut g,
        &bound,
        model.config(),
        s,
        q,
        support_labels,
        query_labels,
    )?;
    g.value(loss).scalar_value()
}

/// The three per-domain losses and their weighted sum, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct TriLossNodes {
    pub total: NodeId,
    pub l_s: NodeId,
    pub l_t: NodeId,
    pub l_mix: NodeId,
}

/// Weighted tri-task loss alpha0*L_S + alpha1*L_T + alpha2*L_Mix from three
/// already-built episode losses.
pub fn weighted_tri_loss(
    g: &mut Graph,
    l_s: NodeId,
    l_t: NodeId,
    l_mix: NodeId,
    weights: &LossWeights,
) -> Result<TriLossNodes> {
    weights.validate()?;
    let a = g.scalar_mul(l_s, weights.alpha0)?;
    let b = g.scalar_mul(l_t, weights.alpha1)?;
    let c = g.scalar_mul(l_mix, weights.alpha2)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(TriLossNodes { total, l_s, l_t, l_mix })
}

/// Numeric tri-task loss over a source, target, and mixed episode.
/// Returns (total, [l_s, l_t, l_mix]).
pub fn fsl_loss(
    model: &Mixup3TParams,
    e_s: &Episode,
    e_t: &Episode,
    e_mix: &MixedEpisode,
    weights: &LossWeights,
) -> Result<(f64, [f64; 3])> {
    if e_s.n_way != e_t.n_way || e_s.n_way != model.config().n_way {
        return Err(Error::InvalidArgument(format!(
            "episode n_way mismatch: source {}, target {}, model {}",
            e_s.n_way,
            e_t.n_way,
            model.config().n_way
        )));
    }
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let cfg = model.config();

    let episode_loss = |support: &Tensor,
                            query: &Tensor,
                            sl: &[usize],
                            ql: &[usize],
                            g: &mut Graph|
     -> Result<NodeId> {
        let s = g.constant(support.clone());
        let q = g.constant(query.clone());
        episode_ce_loss_nodes(g, &bound, cfg, s, q, sl, ql)
    };

    let l_s = episode_loss(&e_s.support, &e_s.query, &e_s.support_labels, &e_s.query_labels, &mut g)?;
    let l_t = episode_loss(&e_t.support, &e_t.query, &e_t.support_labels, &e_t.query_labels, &mut g)?;
    let l_mix = episode_loss(
        &e_mix.s_mix,
        &e_mix.q_mix,
        &e_mix.support_labels,
        &e_mix.query_labels,
        &mut g,
    )?;
    let tri = weighted_tri_loss(&mut g, l_s, l_t, l_mix, weights)?;
    Ok((
        g.value(tri.total).scalar_value()?,
        [
            g.value(tri.l_s).scalar_value()?,
            g.value(tri.l_t).scalar_value()?,
            g.value(tri.l_mix).scalar_value()?,
        ],
    ))
}

/// Ratio network: three affine stages with relu between, sigmoid head.
/// The validation-loss input enters as a detached constant. The pre-sigmoid
/// activation is clamped to [-36, 36] (via relu identities) so the emitted
/// ratio stays strictly inside (0, 1) for any finite input.
pub fn drgn_forward(g: &mut Graph, omega: &BoundParams, l_t_val: f64) -> Result<NodeId> {
    if !l_t_val.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "DRGN input must be finite, got {l_t_val}"
        )));
    }
    let w1 = omega.get("drgn.w1")?;
    let b1 = omega.get("drgn.b1")?;
    let w2 = omega.get("drgn.w2")?;
    let b2 = omega.get("drgn.b2")?;
    let w3 = omega.get("drgn.w3")?;
    let b3 = omega.get("drgn.b3")?;

    let x = g.constant(Tensor::from_vec(&[1, 1], vec![l_t_val])?);
    let h1 = affine(g, x, w1, b1)?;
    let h1 = g.relu(h1)?;
    let h2 = affine(g, h1, w2, b2)?;
    let h2 = g.relu(h2)?;
    let z = affine(g, h2, w3, b3)?;

    const CLAMP: f64 = 36.0;
    let lo = g.constant(Tensor::from_vec(&[1, 1], vec![-CLAMP])?);
    let hi = g.constant(Tensor::from_vec(&[1, 1], vec![CLAMP])?);
    let above_lo = g.sub(z, lo)?;
    let above_lo = g.relu(above_lo)?;
    let clamped_lo = g.add(lo, above_lo)?;
    let above_hi = g.sub(z, hi)?;
    let above_hi = g.relu(above_hi)?;
    let clamped = g.sub(clamped_lo, above_hi)?;

    g.sigmoid(clamped)
}

/// Numeric ratio for a given validation loss.
pub fn drgn_lambda(drgn: &DrgnParams, l_t_val: f64) -> Result<f64> {
    let mut g = Graph::new();
    let bound = g.bind(drgn.params());
    let lam = drgn_forward(&mut g, &bound, l_t_val)?;
    g.value(lam).scalar_value()
}

/// Row-wise argmax with ties broken toward the smallest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per query of a test episode (max-logit rule).
pub fn predict_episode(model: &Mixup3TParams, episode: &Episode) -> Result<Vec<usize>> {
    if episode.n_way != model.config().n_way {
        return Err(Error::InvalidArgument(format!(
            "episode is {}-way but model expects {}-way",
            episode.n_way,
            model.config().n_way
        )));
    }
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let support = g.constant(episode.support.clone());
    let query = g.constant(episode.query.clone());
    let logits = episode_logits_nodes(
        &mut g,
        &bound,
        model.config(),
        support,
        query,
        &episode.support_labels,
    )?;
    Ok(argmax_rows(g.value(logits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, ParamSet};
    use crate::model::DrgnConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_model(seed: u64) -> Mixup3TParams {
        let cfg = ModelConfig {
            input_dim: 4,
            extractor_hidden: 6,
            feature_dim: 5,
            edge_hidden: 4,
            node_dim: 6,
            rounds: 2,
            n_way: 2,
        };
        Mixup3TParams::init(cfg, &mut ChaCha12Rng::seed_from_u64(seed))
    }

    #[test]
    fn identity_extractor_passes_positive_inputs_through() {
        let mut params = ParamSet::new();
        let eye =
            Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        params.insert("ext.w1", eye.clone());
        params.insert("ext.b1", Tensor::zeros(&[1, 2]));
        params.insert("ext.w2", eye);
        params.insert("ext.b2", Tensor::zeros(&[1, 2]));

        let mut g = Graph::new();
        let bound = g.bind(&params);
        let x = g.constant(Tensor::from_vec(&[3, 2], vec![0.5, 2.0, 1.0, 0.25, 3.0, 0.75]).unwrap());
        let f = extract_features(&mut g, &bound, x).unwrap();
        assert_eq!(g.value(f), g.value(x));
    }

    #[test]
    fn zero_extractor_emits_zero_features() {
        let mut params = ParamSet::new();
        params.insert("ext.w1", Tensor::zeros(&[3, 4]));
        params.insert("ext.b1", Tensor::zeros(&[1, 4]));
        params.insert("ext.w2", Tensor::zeros(&[4, 2]));
        params.insert("ext.b2", Tensor::zeros(&[1, 2]));
        let mut g = Graph::new();
        let bound = g.bind(&params);
        let x = g.constant(Tensor::from_vec(&[2, 3], vec![1., -2., 3., 4., 5., -6.]).unwrap());
        let f = extract_features(&mut g, &bound, x).unwrap();
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extractor_gradients_match_finite_differences() {
        let model = tiny_model(5);
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f64 * 0.711).sin()).collect())
            .unwrap();
        let extractor = model.extractor();
        let loss = move |g: &mut Graph, b: &BoundParams| {
            let xc = g.constant(x.clone());
            let f = extract_features(g, b, xc)?;
            g.mean(f)
        };
        let report = finite_diff_check(&loss, &extractor, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn drgn_zero_weights_emit_half() {
        let drgn = DrgnParams::zeroed(DrgnConfig::default());
        for input in [-3.0, 0.0, 11.5] {
            assert_eq!(drgn_lambda(&drgn, input).unwrap(), 0.5);
        }
    }

    #[test]
    fn drgn_output_strictly_inside_unit_interval_for_extreme_inputs() {
        let drgn = DrgnParams::init(DrgnConfig::default(), &mut ChaCha12Rng::seed_from_u64(2));
        for input in [-1e6, 0.0, 1e6] {
            let lam = drgn_lambda(&drgn, input).unwrap();
            assert!(lam > 0.0 && lam < 1.0, "lambda={lam} for input {input}");
        }
    }

    #[test]
    fn drgn_rejects_non_finite_input() {
        let drgn = DrgnParams::zeroed(DrgnConfig::default());
        assert!(drgn_lambda(&drgn, f64::NAN).is_err());
        assert!(drgn_lambda(&drgn, f64::INFINITY).is_err());
    }

    #[test]
    fn drgn_gradients_match_finite_differences() {
        let drgn = DrgnParams::init(DrgnConfig::default(), &mut ChaCha12Rng::seed_from_u64(8));
        let loss =
            |g: &mut Graph, b: &BoundParams| drgn_forward(g, b, 1.3).and_then(|l| g.mean(l));
        let report = finite_diff_check(&loss, drgn.params(), 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn adjacency_rows_are_probability_vectors() {
        let model = tiny_model(3);
        let cfg = *model.config();
        let mut g = Graph::new();
        let bound = g.bind(model.params());
        let support_f = g.constant(Tensor::from_vec(&[2, 5], (0..10).map(|i| i as f64 * 0.3).collect()).unwrap());
        let query_f = g.constant(Tensor::from_vec(&[4, 5], (0..20).map(|i| (i as f64 * 0.17).cos()).collect()).unwrap());
        let (_, adjacencies) =
            gnn_classify_traced(&mut g, &bound, &cfg, query_f, support_f, &[0, 1]).unwrap();
        assert_eq!(adjacencies.len(), cfg.rounds);
        for adj in adjacencies {
            let t = g.value(adj);
            for i in 0..t.rows() {
                let row = t.row(i);
                assert!(row.iter().all(|&v| v >= 0.0));
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() <= 1e-12, "row sum {total}");
            }
        }
    }

    #[test]
    fn permuting_support_rows_with_labels_leaves_logits_unchanged() {
        let model = tiny_model(7);
        let cfg = *model.config();
        let support =
            Tensor::from_vec(&[4, 5], (0..20).map(|i| (i as f64 * 0.41).sin()).collect()).unwrap();
        let query =
            Tensor::from_vec(&[3, 5], (0..15).map(|i| (i as f64 * 0.29).cos()).collect()).unwrap();
        let labels = [0usize, 1, 0, 1];

        let logits_for = |support: &Tensor, labels: &[usize]| -> Tensor {
            let mut g = Graph::new();
            let bound = g.bind(model.params());
            let s = g.constant(support.clone());
            let q = g.constant(query.clone());
            let logits = gnn_classify(&mut g, &bound, &cfg, q, s, labels).unwrap();
            g.value(logits).clone()
        };

        let base = logits_for(&support, &labels);
        // Reverse the support rows, carrying labels along.
        let permuted_rows: Vec<Vec<f64>> =
            (0..4).rev().map(|i| support.row(i).to_vec()).collect();
        let permuted = Tensor::from_rows(&permuted_rows).unwrap();
        let permuted_labels = [1usize, 0, 1, 0];
        let swapped = logits_for(&permuted, &permuted_labels);
        for (a, b) in base.data().iter().zip(swapped.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn missing_class_in_support_is_an_error() {
        let model = tiny_model(1);
        let cfg = *model.config();
        let mut g = Graph::new();
        let bound = g.bind(model.params());
        let s = g.constant(Tensor::ones(&[2, 5]));
        let q = g.constant(Tensor::ones(&[2, 5]));
        let err = gnn_classify(&mut g, &bound, &cfg, q, s, &[0, 0]).unwrap_err();
        assert!(err.to_string().contains("missing from support"), "{err}");
    }

    #[test]
    fn hand_built_two_query_cross_entropy() {
        // logits [[2,0],[0,2]] with labels [0,1]: mean CE = ln(1 + e^-2).
        let mut g = Graph::new();
        let logits = g.constant(Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap());
        let targets = g.constant(one_hot(&[0, 1], 2).unwrap());
        let ce = g.cross_entropy_logits(logits, targets).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((g.value(ce).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn ce_label_out_of_range_is_an_error() {
        assert!(one_hot(&[0, 2], 2).is_err());
    }

    #[test]
    fn weighted_sum_matches_hand_arithmetic() {
        let mut g = Graph::new();
        let l_s = g.scalar_const(1.0);
        let l_t = g.scalar_const(2.0);
        let l_mix = g.scalar_const(3.0);
        let tri = weighted_tri_loss(&mut g, l_s, l_t, l_mix, &LossWeights::default()).unwrap();
        assert_eq!(g.value(tri.total).data(), &[2.25]);

        let only_source = LossWeights { alpha0: 1.0, alpha1: 0.0, alpha2: 0.0 };
        let tri = weighted_tri_loss(&mut g, l_s, l_t, l_mix, &only_source).unwrap();
        assert_eq!(g.value(tri.total).data(), &[1.0]);

        let zero = LossWeights { alpha0: 0.0, alpha1: 0.0, alpha2: 0.0 };
        let tri = weighted_tri_loss(&mut g, l_s, l_t, l_mix, &zero).unwrap();
        assert_eq!(g.value(tri.total).data(), &[0.0]);
    }

    #[test]
    fn argmax_breaks_ties_toward_smallest_index() {
        let logits =
            Tensor::from_vec(&[2, 5], vec![0.1, 0.9, 0.3, 0.2, 0.1, 1.0, 1.0, 0.0, 0.0, 0.0])
                .unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0]);
    }

    #[test]
    fn argmax_is_shift_invariant() {
        let base = Tensor::from_vec(&[1, 4], vec![0.3, -1.0, 2.5, 2.5]).unwrap();
        let shifted = base.map(|v| v + 100.0);
        assert_eq!(argmax_rows(&base), argmax_rows(&shifted));
    }
}
