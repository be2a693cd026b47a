//! The bi-level training loop.
//!
//! Each iteration: generate a candidate ratio from the DRGN, take a pseudo
//! gradient step on a copy of the classifier parameters, measure the
//! validation loss after that step, update the DRGN through the
//! hypergradient, regenerate the ratio, take the real classifier step, and
//! refresh the validation loss for the next iteration.

mod adam;
mod log;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use log::{parse_csv, read_csv, to_csv, write_csv, IterationLog, CSV_HEADER};

use std::time::Instant;

use rand_distr::Distribution;

use crate::autodiff::{BoundParams, Graph, NodeId, Tensor};
use crate::data::{
    align_for_mix, mix_aligned, sample_episode, DomainDataset, Episode, MixedEpisode,
    SampleAlignment, SplitSpec,
};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::model::{
    drgn_forward, drgn_lambda, episode_ce_loss, episode_ce_loss_nodes, weighted_tri_loss,
    DrgnConfig, DrgnParams, LossWeights, ModelConfig, Mixup3TParams,
};

/// Which training procedure to run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    /// Full bi-level loop with the learned ratio network.
    Tgdm,
    /// Merged source+target training, no intermediate domain.
    MBase,
    /// Tri-task training with a random mix ratio per iteration.
    BaseM3T { alpha: f64, beta: f64 },
    /// Tri-task training with a constant mix ratio.
    M3TFixed { lambda: f64 },
}

impl Variant {
    pub fn base_m3t() -> Self {
        Variant::BaseM3T { alpha: 1.0, beta: 1.0 }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Tgdm => "tgdm",
            Variant::MBase => "m-base",
            Variant::BaseM3T { .. } => "base-m3t",
            Variant::M3TFixed { .. } => "m3t-fixed",
        }
    }
}

/// Training hyperparameters. Defaults follow the reference protocol:
/// tri-task weights (0.25, 0.25, 0.5), learning rates 0.001 / 0.0001,
/// DRGN weight decay 1e-5, 5-way episodes with 15 queries.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub lr_theta: f64,
    pub lr_omega: f64,
    pub weight_decay_omega: f64,
    /// Step size of the pseudo (inner) gradient step.
    pub inner_step_size: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Console progress cadence in iterations (0 disables).
    pub log_every: usize,
    pub variant: Variant,
    pub extractor_hidden: usize,
    pub feature_dim: usize,
    pub edge_hidden: usize,
    pub node_dim: usize,
    pub gnn_rounds: usize,
    pub drgn_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            n_way: 5,
            k_shot: 1,
            n_query: 15,
            lr_theta: 0.001,
            lr_omega: 0.0001,
            weight_decay_omega: 1e-5,
            inner_step_size: 0.001,
            weights: LossWeights::default(),
            seed: 0,
            log_every: 100,
            variant: Variant::Tgdm,
            extractor_hidden: 64,
            feature_dim: 32,
            edge_hidden: 16,
            node_dim: 32,
            gnn_rounds: 2,
            drgn_hidden: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.n_way == 0 || self.k_shot == 0 || self.n_query == 0 {
            return Err(Error::InvalidArgument(format!(
                "episode shape must be positive: N={}, k={}, n_q={}",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        for (name, v) in [("lr_theta", self.lr_theta), ("lr_omega", self.lr_omega)] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name}={v} must be positive")));
            }
        }
        if self.weight_decay_omega < 0.0 || self.inner_step_size < 0.0 {
            return Err(Error::InvalidArgument(
                "weight_decay_omega and inner_step_size must be nonnegative".into(),
            ));
        }
        self.weights.validate()?;
        match self.variant {
            Variant::M3TFixed { lambda } if !(lambda > 0.0 && lambda < 1.0) => {
                return Err(Error::InvalidArgument(format!(
                    "m3t-fixed lambda={lambda} must lie strictly in (0, 1)"
                )));
            }
            Variant::BaseM3T { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => {
                return Err(Error::InvalidArgument(format!(
                    "Beta parameters must be positive, got ({alpha}, {beta})"
                )));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            extractor_hidden: self.extractor_hidden,
            feature_dim: self.feature_dim,
            edge_hidden: self.edge_hidden,
            node_dim: self.node_dim,
            rounds: self.gnn_rounds,
            n_way: self.n_way,
        }
    }

    pub fn drgn_config(&self) -> DrgnConfig {
        DrgnConfig { hidden1: self.drgn_hidden, hidden2: self.drgn_hidden }
    }
}

// Deterministic rng streams, one per (seed, iteration, purpose).
const STREAM_INIT_THETA: u64 = 0;
const STREAM_INIT_DRGN: u64 = 1;
const STREAM_INIT_VAL: u64 = 2;
const STREAM_EP_SOURCE: u64 = 3;
const STREAM_EP_TARGET: u64 = 4;
const STREAM_EP_VAL: u64 = 5;
const STREAM_MIX_ALIGN: u64 = 6;
const STREAM_LAMBDA: u64 = 7;


/// Outcome of the pseudo (first-level) step: the graph holding the candidate
/// ratio, the tri-task loss, and the pseudo-updated parameters, all still
/// differentiable with respect to the ratio network.
pub struct PseudoStep {
    pub graph: Graph,
    pub theta_hat: BoundParams,
    pub omega: BoundParams,
    pub lambda_hat: f64,
    pub loss_fsl: f64,
    /// In-graph mixed support and query tensors (functions of the ratio).
    pub s_mix: NodeId,
    pub q_mix: NodeId,
}

fn episode_loss_consts(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    episode: &Episode,
) -> Result<NodeId> {
    let support = g.constant(episode.support.clone());
    let query = g.constant(episode.query.clone());
    episode_ce_loss_nodes(
        g,
        bound,
        cfg,
        support,
        query,
        &episode.support_labels,
        &episode.query_labels,
    )
}

/// First level of the bi-level loop: generate the candidate ratio from the
/// previous validation loss, build the mixed episode *inside* the graph so
/// that it stays a function of the ratio network, compute the tri-task loss,
/// and take one plain gradient step on a copy of theta. The original model
/// and ratio-network parameters are not touched.
pub fn pseudo_step(
    model: &Mixup3TParams,
    drgn: &DrgnParams,
    e_s: &Episode,
    e_t: &Episode,
    alignment: &SampleAlignment,
    l_t_val_prev: f64,
    cfg: &TrainConfig,
) -> Result<PseudoStep> {
    let mut g = Graph::new();
    let theta = g.bind(model.params());
    let omega = g.bind(drgn.params());
    let mcfg = model.config();

    let lambda_hat = drgn_forward(&mut g, &omega, l_t_val_prev)?;

    let pair = align_for_mix(e_s, e_t, alignment)?;
    let s_src = g.constant(pair.s_src.clone());
    let s_tgt = g.constant(pair.s_tgt.clone());
    let q_src = g.constant(pair.q_src.clone());
    let q_tgt = g.constant(pair.q_tgt.clone());
    let one = g.constant(Tensor::from_vec(&[1, 1], vec![1.0])?);
    let one_minus = g.sub(one, lambda_hat)?;
    let s_mix = {
        let a = g.scale_by_scalar(s_src, lambda_hat)?;
        let b = g.scale_by_scalar(s_tgt, one_minus)?;
        g.add(a, b)?
    };
    let q_mix = {
        let a = g.scale_by_scalar(q_src, lambda_hat)?;
        let b = g.scale_by_scalar(q_tgt, one_minus)?;
        g.add(a, b)?
    };

    let l_s = episode_loss_consts(&mut g, &theta, mcfg, e_s)?;
    let l_t = episode_loss_consts(&mut g, &theta, mcfg, e_t)?;
    let l_mix = episode_ce_loss_nodes(
        &mut g,
        &theta,
        mcfg,
        s_mix,
        q_mix,
        &pair.support_labels,
        &pair.query_labels,
    )?;
    let tri = weighted_tri_loss(&mut g, l_s, l_t, l_mix, &cfg.weights)?;

    let grads = g.backward(tri.total, &theta.ids())?;
    let mut hat_entries = Vec::with_capacity(theta.len());
    for ((name, param), grad) in theta.iter().zip(&grads) {
        let scaled = g.scalar_mul(*grad, cfg.inner_step_size)?;
        let updated = g.sub(param, scaled)?;
        hat_entries.push((name.to_string(), updated));
    }

    let lambda_value = g.value(lambda_hat).scalar_value()?;
    let loss_value = g.value(tri.total).scalar_value()?;
    Ok(PseudoStep {
        graph: g,
        theta_hat: BoundParams::from_pairs(hat_entries),
        omega,
        lambda_hat: lambda_value,
        loss_fsl: loss_value,
        s_mix,
        q_mix,
    })
}

/// Second half of the first level: validation loss of the pseudo-updated
/// parameters on a fresh auxiliary episode, hypergradient with respect to
/// the ratio network, one Adam step with decoupled weight decay.
/// Returns the candidate ratio that was used.
#[allow(clippy::too_many_arguments)]
pub fn drgn_update(
    drgn: &mut DrgnParams,
    adam_omega: &mut AdamState,
    model: &Mixup3TParams,
    e_s: &Episode,
    e_t: &Episode,
    e_t_val: &Episode,
    alignment: &SampleAlignment,
    l_t_val_prev: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut pseudo = pseudo_step(model, drgn, e_s, e_t, alignment, l_t_val_prev, cfg)?;
    let g = &mut pseudo.graph;
    let val_loss = episode_loss_consts(g, &pseudo.theta_hat, model.config(), e_t_val)?;
    let hypergrads = g.backward_params(val_loss, &pseudo.omega)?;
    adam_step(
        drgn.params_mut(),
        &hypergrads,
        adam_omega,
        cfg.lr_omega,
        cfg.weight_decay_omega,
    )?;
    Ok(pseudo.lambda_hat)
}

/// Loss components of one real classifier step.
#[derive(Clone, Copy, Debug)]
pub struct ThetaStep {
    pub lambda: f64,
    pub loss_s: f64,
    pub loss_t: f64,
    pub loss_mix: f64,
    pub loss_fsl: f64,
}

fn tri_task_theta_step(
    model: &mut Mixup3TParams,
    adam_theta: &mut AdamState,
    e_s: &Episode,
    e_t: &Episode,
    mixed: Option<&MixedEpisode>,
    weights: &LossWeights,
    lr: f64,
) -> Result<ThetaStep> {
    let cfg = *model.config();
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let l_s = episode_loss_consts(&mut g, &bound, &cfg, e_s)?;
    let l_t = episode_loss_consts(&mut g, &bound, &cfg, e_t)?;
    let l_mix = match mixed {
        Some(m) => {
            let support = g.constant(m.s_mix.clone());
            let query = g.constant(m.q_mix.clone());
            episode_ce_loss_nodes(
                &mut g,
                &bound,
                &cfg,
                support,
                query,
                &m.support_labels,
                &m.query_labels,
            )?
        }
        None => g.scalar_const(0.0),
    };
    let tri = weighted_tri_loss(&mut g, l_s, l_t, l_mix, weights)?;
    let grads = g.backward_params(tri.total, &bound)?;
    adam_step(model.params_mut(), &grads, adam_theta, lr, 0.0)?;
    Ok(ThetaStep {
        lambda: mixed.map(|m| m.lambda_used).unwrap_or(0.5),
        loss_s: g.value(tri.l_s).scalar_value()?,
        loss_t: g.value(tri.l_t).scalar_value()?,
        loss_mix: g.value(tri.l_mix).scalar_value()?,
        loss_fsl: g.value(tri.total).scalar_value()?,
    })
}

/// Second level of the bi-level loop: regenerate the ratio from the updated
/// ratio network (same validation-loss input), rebuild the mixed episode,
/// and take one Adam step on the full classifier parameters.
pub fn theta_update(
    model: &mut Mixup3TParams,
    adam_theta: &mut AdamState,
    drgn: &DrgnParams,
    e_s: &Episode,
    e_t: &Episode,
    alignment: &SampleAlignment,
    l_t_val_prev: f64,
    cfg: &TrainConfig,
) -> Result<ThetaStep> {
    let lambda = drgn_lambda(drgn, l_t_val_prev)?;
    let pair = align_for_mix(e_s, e_t, alignment)?;
    let mixed = mix_aligned(&pair, lambda)?;
    tri_task_theta_step(model, adam_theta, e_s, e_t, Some(&mixed), &cfg.weights, cfg.lr_theta)
}

/// Everything a finished run returns: final parameters of both networks and
/// the per-iteration log.
pub struct TrainResult {
    pub model: Mixup3TParams,
    pub drgn: DrgnParams,
    pub log: Vec<IterationLog>,
}

/// Run the configured variant. `hook` fires after every iteration with the
/// fresh log row and current parameters (checkpointing, CSV streaming).
pub fn train_with_hook(
    source: &DomainDataset,
    target: &DomainDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    mut hook: impl FnMut(&IterationLog, &Mixup3TParams, &DrgnParams) -> Result<()>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if source.feature_dim() != target.feature_dim() {
        return Err(Error::InvalidArgument(format!(
            "feature dims differ: source {} vs target {}",
            source.feature_dim(),
            target.feature_dim()
        )));
    }
    let base_ds = source.restrict(&split.source_base, None)?;
    let aux_ds = target.restrict(&split.aux_target, split.aux_cap_per_class)?;
    let base_classes = base_ds.class_names();
    let aux_classes = aux_ds.class_names();

    let mut model = Mixup3TParams::init(
        cfg.model_config(source.feature_dim()),
        &mut stream_rng(cfg.seed, 0, STREAM_INIT_THETA),
    );
    let mut drgn =
        DrgnParams::init(cfg.drgn_config(), &mut stream_rng(cfg.seed, 0, STREAM_INIT_DRGN));
    let mut adam_theta = AdamState::new();
    let mut adam_omega = AdamState::new();

    // Initial validation loss from a fresh auxiliary episode.
    let mut l_t_val = {
        let mut rng = stream_rng(cfg.seed, 0, STREAM_INIT_VAL);
        let ep = sample_episode(&aux_ds, &aux_classes, cfg.n_way, cfg.k_shot, cfg.n_query, &mut rng)
            .map_err(|e| e.at_iteration(0))?;
        episode_ce_loss(&model, &ep.support, &ep.query, &ep.support_labels, &ep.query_labels)
            .map_err(|e| e.at_iteration(0))?
    };

    let mut log = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let started = Instant::now();
        let iteration_result: Result<(f64, ThetaStep)> = (|| {
            let ti = t as u64;
            let mut rng_s = stream_rng(cfg.seed, ti, STREAM_EP_SOURCE);
            let mut rng_t = stream_rng(cfg.seed, ti, STREAM_EP_TARGET);
            let mut rng_v = stream_rng(cfg.seed, ti, STREAM_EP_VAL);
            let e_s =
                sample_episode(&base_ds, &base_classes, cfg.n_way, cfg.k_shot, cfg.n_query, &mut rng_s)?;
            let e_t =
                sample_episode(&aux_ds, &aux_classes, cfg.n_way, cfg.k_shot, cfg.n_query, &mut rng_t)?;
            let e_t_val =
                sample_episode(&aux_ds, &aux_classes, cfg.n_way, cfg.k_shot, cfg.n_query, &mut rng_v)?;
            let alignment = SampleAlignment::sample(
                &mut stream_rng(cfg.seed, ti, STREAM_MIX_ALIGN),
                cfg.n_way,
                cfg.k_shot,
                cfg.n_query,
            );

            let (lambda_hat, step) = match cfg.variant {
                Variant::Tgdm => {
                    let lambda_hat = drgn_update(
                        &mut drgn,
                        &mut adam_omega,
                        &model,
                        &e_s,
                        &e_t,
                        &e_t_val,
                        &alignment,
                        l_t_val,
                        cfg,
                    )?;
                    let step = theta_update(
                        &mut model,
                        &mut adam_theta,
                        &drgn,
                        &e_s,
                        &e_t,
                        &alignment,
                        l_t_val,
                        cfg,
                    )?;
                    (lambda_hat, step)
                }
                Variant::MBase => {
                    // Merged-data training: equal weight on the two real
                    // domains, no intermediate episode, neutral ratio logged.
                    let weights = LossWeights { alpha0: 0.5, alpha1: 0.5, alpha2: 0.0 };
                    let step = tri_task_theta_step(
                        &mut model,
                        &mut adam_theta,
                        &e_s,
                        &e_t,
                        None,
                        &weights,
                        cfg.lr_theta,
                    )?;
                    (step.lambda, step)
                }
                Variant::BaseM3T { alpha, beta } => {
                    let dist = rand_distr::Beta::new(alpha, beta).map_err(|e| {
                        Error::InvalidArgument(format!("Beta({alpha}, {beta}): {e}"))
                    })?;
                    let mut rng = stream_rng(cfg.seed, ti, STREAM_LAMBDA);
                    let lambda =
                        dist.sample(&mut rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                    let pair = align_for_mix(&e_s, &e_t, &alignment)?;
                    let mixed = mix_aligned(&pair, lambda)?;
                    let step = tri_task_theta_step(
                        &mut model,
                        &mut adam_theta,
                        &e_s,
                        &e_t,
                        Some(&mixed),
                        &cfg.weights,
                        cfg.lr_theta,
                    )?;
                    (lambda, step)
                }
                Variant::M3TFixed { lambda } => {
                    let pair = align_for_mix(&e_s, &e_t, &alignment)?;
                    let mixed = mix_aligned(&pair, lambda)?;
                    let step = tri_task_theta_step(
                        &mut model,
                        &mut adam_theta,
                        &e_s,
                        &e_t,
                        Some(&mixed),
                        &cfg.weights,
                        cfg.lr_theta,
                    )?;
                    (lambda, step)
                }
            };

            // Refresh the validation loss on the same episode for the next
            // iteration's ratio generation.
            l_t_val = episode_ce_loss(
                &model,
                &e_t_val.support,
                &e_t_val.query,
                &e_t_val.support_labels,
                &e_t_val.query_labels,
            )?;
            Ok((lambda_hat, step))
        })();
        let (lambda_hat, step) = iteration_result.map_err(|e| e.at_iteration(t))?;

        let row = IterationLog {
            iteration: t,
            lambda_hat,
            lambda: step.lambda,
            loss_s: step.loss_s,
            loss_t: step.loss_t,
            loss_mix: step.loss_mix,
            loss_fsl: step.loss_fsl,
            loss_tval: l_t_val,
            ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if cfg.log_every > 0 && (t % cfg.log_every == 0 || t + 1 == cfg.iterations) {
            ::log::info!(
                "[{}] iter {t}/{} lambda_hat={:.4} lambda={:.4} L_FSL={:.4} L_Tval={:.4}",
                cfg.variant.tag(),
                cfg.iterations,
                row.lambda_hat,
                row.lambda,
                row.loss_fsl,
                row.loss_tval,
            );
        }
        hook(&row, &model, &drgn).map_err(|e| e.at_iteration(t))?;
        log.push(row);
    }

    Ok(TrainResult { model, drgn, log })
}

/// [`train_with_hook`] without a per-iteration hook.
pub fn train(
    source: &DomainDataset,
    target: &DomainDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_with_hook(source, target, split, cfg, |_, _, _| Ok(()))
}
