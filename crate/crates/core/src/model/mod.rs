//! The Mixup-3T classifier (MLP feature extractor + graph message-passing
//! few-shot classifier) and the dynamic ratio generation network.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    argmax_rows, drgn_forward, drgn_lambda, episode_ce_loss, episode_ce_loss_nodes,
    episode_logits_nodes, extract_features, fsl_loss, gnn_classify, one_hot, predict_episode,
    weighted_tri_loss, TriLossNodes,
};

use rand::Rng;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Mixup-3T architecture hyperparameters. The extractor is a two-layer MLP
/// replacing the image backbone; the classifier is a fixed two-round graph
/// network over the support/query nodes of one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub extractor_hidden: usize,
    pub feature_dim: usize,
    pub edge_hidden: usize,
    pub node_dim: usize,
    pub rounds: usize,
    pub n_way: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, n_way: usize) -> Self {
        ModelConfig {
            input_dim,
            extractor_hidden: 64,
            feature_dim: 32,
            edge_hidden: 16,
            node_dim: 32,
            rounds: 2,
            n_way,
        }
    }

    /// Node-feature width entering round `r` (features plus label encoding
    /// before the first round, node_dim afterwards).
    fn round_width(&self, r: usize) -> usize {
        if r == 0 {
            self.feature_dim + self.n_way
        } else {
            self.node_dim
        }
    }

    /// Reconstruct the configuration from checkpoint tensor shapes.
    pub fn infer(params: &ParamSet) -> Result<Self> {
        let w1 = params.require("ext.w1")?;
        let w2 = params.require("ext.w2")?;
        let edge = params.require("cls.r0.edge_w1")?;
        let node = params.require("cls.r0.node_w")?;
        let readout = params.require("cls.readout_w")?;
        let rounds = (0..)
            .take_while(|r| params.get(&format!("cls.r{r}.node_w")).is_some())
            .count();
        let cfg = ModelConfig {
            input_dim: w1.rows(),
            extractor_hidden: w1.cols(),
            feature_dim: w2.cols(),
            edge_hidden: edge.cols(),
            node_dim: node.cols(),
            rounds,
            n_way: readout.cols(),
        };
        Ok(cfg)
    }
}

/// DRGN hyperparameters: three affine stages, scalar in, sigmoid out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrgnConfig {
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for DrgnConfig {
    fn default() -> Self {
        DrgnConfig { hidden1: 16, hidden2: 16 }
    }
}

/// Tri-task loss weights (alpha0, alpha1, alpha2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha0: 0.25, alpha1: 0.25, alpha2: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha0 < 0.0 || self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be nonnegative: ({}, {}, {})",
                self.alpha0, self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }
}

/// Insert `{stem}w{suffix}` and `{stem}b{suffix}` for one affine layer.
fn init_affine(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    stem: &str,
    suffix: &str,
    fan_in: usize,
    out: usize,
) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |rows: usize, cols: usize| -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::from_vec(&[rows, cols], data).expect("positive extents")
    };
    let w = draw(fan_in, out);
    let b = draw(1, out);
    params.insert(format!("{stem}w{suffix}"), w);
    params.insert(format!("{stem}b{suffix}"), b);
}

/// Feature-extractor plus graph-classifier parameters (theta).
///
/// Extractor entries are prefixed `ext.`, classifier entries `cls.`; one
/// flat set keeps optimizer sweeps and checkpoints trivially ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixup3TParams {
    cfg: ModelConfig,
    params: ParamSet,
}

impl Mixup3TParams {
    /// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn init(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        init_affine(&mut params, rng, "ext.", "1", cfg.input_dim, cfg.extractor_hidden);
        init_affine(&mut params, rng, "ext.", "2", cfg.extractor_hidden, cfg.feature_dim);
        for r in 0..cfg.rounds {
            let width = cfg.round_width(r);
            init_affine(&mut params, rng, &format!("cls.r{r}.edge_"), "1", width, cfg.edge_hidden);
            init_affine(&mut params, rng, &format!("cls.r{r}.edge_"), "2", cfg.edge_hidden, 1);
            init_affine(&mut params, rng, &format!("cls.r{r}.node_"), "", 2 * width, cfg.node_dim);
        }
        init_affine(&mut params, rng, "cls.readout_", "", cfg.node_dim, cfg.n_way);
        Mixup3TParams { cfg, params }
    }

    /// Rebuild from a checkpointed set; extra entries (e.g. DRGN weights in
    /// the same container) are ignored, missing or misshapen ones rejected.
    pub fn from_params(cfg: ModelConfig, source: &ParamSet) -> Result<Self> {
        let reference = {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
            Mixup3TParams::init(cfg, &mut rng)
        };
        let mut params = ParamSet::new();
        for (name, expected) in reference.params.iter() {
            let tensor = source.require(name)?;
            if tensor.shape() != expected.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    expected.shape()
                )));
            }
            params.insert(name, tensor.clone());
        }
        Ok(Mixup3TParams { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn extractor(&self) -> ParamSet {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("ext."))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    pub fn classifier(&self) -> ParamSet {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("cls."))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }
}

/// Ratio-network parameters (omega): three affine stages behind `drgn.`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrgnParams {
    cfg: DrgnConfig,
    params: ParamSet,
}

impl DrgnParams {
    pub fn init(cfg: DrgnConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        init_affine(&mut params, rng, "drgn.", "1", 1, cfg.hidden1);
        init_affine(&mut params, rng, "drgn.", "2", cfg.hidden1, cfg.hidden2);
        init_affine(&mut params, rng, "drgn.", "3", cfg.hidden2, 1);
        DrgnParams { cfg, params }
    }

    /// All-zero weights; the sigmoid head then emits exactly 0.5.
    pub fn zeroed(cfg: DrgnConfig) -> Self {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        let mut init = DrgnParams::init(cfg, &mut rng);
        for (_, tensor) in init.params.iter_mut() {
            tensor.data_mut().fill(0.0);
        }
        init
    }

    pub fn from_params(cfg: DrgnConfig, source: &ParamSet) -> Result<Self> {
        let reference = DrgnParams::zeroed(cfg);
        let mut params = ParamSet::new();
        for (name, expected) in reference.params.iter() {
            let tensor = source.require(name)?;
            if tensor.shape() != expected.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    expected.shape()
                )));
            }
            params.insert(name, tensor.clone());
        }
        Ok(DrgnParams { cfg, params })
    }

    pub fn config(&self) -> &DrgnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = ModelConfig::new(8, 5);
        let a = Mixup3TParams::init(cfg, &mut ChaCha12Rng::seed_from_u64(3));
        let b = Mixup3TParams::init(cfg, &mut ChaCha12Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.params().require("ext.w1").unwrap().shape(), &[8, 64]);
        assert_eq!(a.params().require("cls.r0.edge_w1").unwrap().shape(), &[32 + 5, 16]);
        assert_eq!(a.params().require("cls.r1.node_w").unwrap().shape(), &[64, 32]);
        assert_eq!(a.params().require("cls.readout_w").unwrap().shape(), &[32, 5]);
    }

    #[test]
    fn config_inference_roundtrips() {
        let cfg = ModelConfig::new(12, 4);
        let model = Mixup3TParams::init(cfg, &mut ChaCha12Rng::seed_from_u64(1));
        let inferred = ModelConfig::infer(model.params()).unwrap();
        assert_eq!(inferred, cfg);
    }

    #[test]
    fn drgn_zeroed_has_three_affine_stages() {
        let drgn = DrgnParams::zeroed(DrgnConfig::default());
        let names: Vec<_> = drgn.params().names().collect();
        assert_eq!(names, vec!["drgn.w1", "drgn.b1", "drgn.w2", "drgn.b2", "drgn.w3", "drgn.b3"]);
        assert!(drgn.params().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn split_views_cover_all_params() {
        let cfg = ModelConfig::new(6, 3);
        let model = Mixup3TParams::init(cfg, &mut ChaCha12Rng::seed_from_u64(9));
        let total = model.extractor().len() + model.classifier().len();
        assert_eq!(total, model.params().len());
    }
}
