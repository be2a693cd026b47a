//! Testing protocol (repeated N-way k-shot episodes on the novel split) and
//! the baseline ladder: m-base, base-M3T, M3T-fixed, TGDM.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_episode, DomainDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{predict_episode, Mixup3TParams};
use crate::rng::stream_rng;
use crate::train::{train, IterationLog, TrainConfig, TrainResult, Variant};

const STREAM_EVAL: u64 = 0xE7A1;

/// Evaluation protocol parameters. Defaults: 5-way episodes with 15 queries,
/// 600 episodes at desk scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub n_episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_way: 5, k_shot: 1, n_query: 15, n_episodes: 600, seed: 0 }
    }
}

/// Aggregated evaluation outcome. The JSON-line form carries the summary
/// fields only; per-episode accuracies stay in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n_episodes: usize,
    pub mean_acc: f64,
    pub ci95: f64,
    pub seed: u64,
    pub config_digest: String,
    #[serde(skip)]
    pub per_episode: Vec<f64>,
}

impl EvalReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line)
            .map_err(|e| Error::data(None, format!("bad report line: {e}")))
    }
}

/// Short hex digest of a canonical configuration string.
pub fn config_digest(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// The novel-classes view of the target dataset (the only data evaluation
/// may touch).
pub fn novel_dataset(target: &DomainDataset, split: &SplitSpec) -> Result<DomainDataset> {
    target.restrict(&split.target_novel, None)
}

/// Sample `n_episodes` episodes from `novel`, predict with the max-logit
/// rule, and aggregate mean accuracy with a 95% confidence half-width
/// (1.96 * stddev / sqrt(n)).
pub fn evaluate_accuracy(
    model: &Mixup3TParams,
    novel: &DomainDataset,
    cfg: &EvalConfig,
    method: &str,
    config_digest: &str,
) -> Result<EvalReport> {
    if cfg.n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be positive".into()));
    }
    let classes = novel.class_names();
    let mut per_episode = Vec::with_capacity(cfg.n_episodes);
    for idx in 0..cfg.n_episodes {
        let mut rng = stream_rng(cfg.seed, idx as u64, STREAM_EVAL);
        let episode =
            sample_episode(novel, &classes, cfg.n_way, cfg.k_shot, cfg.n_query, &mut rng)?;
        let predictions = predict_episode(model, &episode)?;
        let correct = predictions
            .iter()
            .zip(&episode.query_labels)
            .filter(|(p, l)| p == l)
            .count();
        per_episode.push(correct as f64 / episode.query_labels.len() as f64);
    }

    let n = per_episode.len() as f64;
    let mean = per_episode.iter().sum::<f64>() / n;
    let ci95 = if per_episode.len() > 1 {
        let var = per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * var.sqrt() / n.sqrt()
    } else {
        0.0
    };

    Ok(EvalReport {
        method: method.to_string(),
        n_episodes: cfg.n_episodes,
        mean_acc: mean,
        ci95,
        seed: cfg.seed,
        config_digest: config_digest.to_string(),
        per_episode,
    })
}

/// One ladder entry: the variant that ran and either its report or the
/// failure that stopped it.
pub struct SuiteEntry {
    pub variant: Variant,
    pub outcome: Result<(TrainResult, EvalReport)>,
}

/// Train and evaluate each variant under identical seeds and episode
/// streams. A failing variant is recorded and the suite continues.
pub fn run_baseline_suite(
    source: &DomainDataset,
    target: &DomainDataset,
    split: &SplitSpec,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    variants: &[Variant],
) -> Result<Vec<SuiteEntry>> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument("variants must be nonempty".into()));
    }
    let novel = novel_dataset(target, split)?;
    let mut entries = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut cfg = train_cfg.clone();
        cfg.variant = variant;
        let digest = config_digest(&format!("{cfg:?}|{eval_cfg:?}"));
        let outcome = train(source, target, split, &cfg).and_then(|result| {
            let report =
                evaluate_accuracy(&result.model, &novel, eval_cfg, variant.tag(), &digest)?;
            Ok((result, report))
        });
        entries.push(SuiteEntry { variant, outcome });
    }
    Ok(entries)
}

/// Mean, population standard deviation, and windowed means (window = T/20)
/// of the logged mix-ratio trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaStats {
    pub mean: f64,
    pub stddev: f64,
    pub window: usize,
    pub window_means: Vec<f64>,
}

pub fn lambda_trajectory_stats(log: &[IterationLog]) -> Result<LambdaStats> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty iteration log".into()));
    }
    let n = log.len() as f64;
    let mean = log.iter().map(|r| r.lambda).sum::<f64>() / n;
    let var = log.iter().map(|r| (r.lambda - mean).powi(2)).sum::<f64>() / n;
    let window = (log.len() / 20).max(1);
    let window_means = log
        .chunks(window)
        .map(|chunk| chunk.iter().map(|r| r.lambda).sum::<f64>() / chunk.len() as f64)
        .collect();
    Ok(LambdaStats { mean, stddev: var.sqrt(), window, window_means })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with_lambdas(lambdas: &[f64]) -> Vec<IterationLog> {
        lambdas
            .iter()
            .enumerate()
            .map(|(t, &lambda)| IterationLog {
                iteration: t,
                lambda_hat: lambda,
                lambda,
                loss_s: 1.0,
                loss_t: 1.0,
                loss_mix: 1.0,
                loss_fsl: 1.0,
                loss_tval: 1.0,
                ms: 1.0,
            })
            .collect()
    }

    #[test]
    fn constant_trajectory_has_zero_stddev() {
        let stats = lambda_trajectory_stats(&log_with_lambdas(&[0.5; 40])).unwrap();
        assert_eq!(stats.mean, 0.5);
        assert_eq!(stats.stddev, 0.0);
        assert_eq!(stats.window, 2);
        assert!(stats.window_means.iter().all(|&m| m == 0.5));
    }

    #[test]
    fn alternating_trajectory_stats_by_hand() {
        let lambdas: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.2 } else { 0.8 }).collect();
        let stats = lambda_trajectory_stats(&log_with_lambdas(&lambdas)).unwrap();
        assert!((stats.mean - 0.5).abs() < 1e-12);
        assert!((stats.stddev - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(lambda_trajectory_stats(&[]).is_err());
    }

    #[test]
    fn report_json_line_has_summary_fields_only() {
        let report = EvalReport {
            method: "tgdm".into(),
            n_episodes: 600,
            mean_acc: 0.61,
            ci95: 0.012,
            seed: 7,
            config_digest: "deadbeef".into(),
            per_episode: vec![0.5, 0.72],
        };
        let line = report.to_json_line();
        assert!(line.contains("\"method\":\"tgdm\""));
        assert!(!line.contains("per_episode"));
        let parsed = EvalReport::from_json_line(&line).unwrap();
        assert_eq!(parsed.mean_acc, 0.61);
        assert!(parsed.per_episode.is_empty());
    }

    #[test]
    fn digest_is_stable_and_short() {
        let a = config_digest("cfg-a");
        assert_eq!(a, config_digest("cfg-a"));
        assert_ne!(a, config_digest("cfg-b"));
        assert_eq!(a.len(), 16);
    }
}
