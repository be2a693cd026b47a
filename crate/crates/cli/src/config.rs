//! Line-oriented `key = value` run configuration.
//!
//! `#` starts a comment, blank lines are ignored, unknown keys are hard
//! errors, and the seed is mandatory — no wall-clock fallback anywhere.

use std::fmt::Write as _;
use std::path::PathBuf;

use tgdm_core::data::{DomainShiftSpec, SplitConfig};
use tgdm_core::eval::EvalConfig;
use tgdm_core::model::LossWeights;
use tgdm_core::train::{TrainConfig, Variant};

use crate::CliError;

/// Where the two domains come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Load `.fmat` directories from disk.
    Dirs { source_dir: PathBuf, target_dir: PathBuf },
    /// Generate Gaussian-cluster domains in memory.
    Synthetic {
        seed: u64,
        classes_source: usize,
        classes_target: usize,
        per_class: usize,
        dim: usize,
        shift: DomainShiftSpec,
    },
}

/// Everything a run needs: training hyperparameters, data source, split
/// policy, evaluation protocol, and output location.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub split: SplitConfig,
    pub out_dir: PathBuf,
    pub checkpoint_every: Option<usize>,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub eval_n_query: usize,
}

impl RunConfig {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            n_way: self.train.n_way,
            k_shot: self.train.k_shot,
            n_query: self.eval_n_query,
            n_episodes: self.eval_episodes,
            seed: self.eval_seed,
        }
    }

    /// Canonical text form; `parse(to_config_text(parse(x)))` is identical
    /// to `parse(x)`.
    pub fn to_config_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "iterations = {}", t.iterations);
        let _ = writeln!(s, "n_way = {}", t.n_way);
        let _ = writeln!(s, "k_shot = {}", t.k_shot);
        let _ = writeln!(s, "n_query = {}", t.n_query);
        let _ = writeln!(s, "lr_theta = {}", t.lr_theta);
        let _ = writeln!(s, "lr_omega = {}", t.lr_omega);
        let _ = writeln!(s, "weight_decay_omega = {}", t.weight_decay_omega);
        let _ = writeln!(s, "inner_step_size = {}", t.inner_step_size);
        let _ = writeln!(s, "alpha0 = {}", t.weights.alpha0);
        let _ = writeln!(s, "alpha1 = {}", t.weights.alpha1);
        let _ = writeln!(s, "alpha2 = {}", t.weights.alpha2);
        let _ = writeln!(s, "log_every = {}", t.log_every);
        let _ = writeln!(s, "variant = {}", t.variant.tag());
        if let Variant::M3TFixed { lambda } = t.variant {
            let _ = writeln!(s, "lambda = {lambda}");
        }
        if let Variant::BaseM3T { alpha, beta } = t.variant {
            let _ = writeln!(s, "beta_a = {alpha}");
            let _ = writeln!(s, "beta_b = {beta}");
        }
        let _ = writeln!(s, "extractor_hidden = {}", t.extractor_hidden);
        let _ = writeln!(s, "feature_dim = {}", t.feature_dim);
        let _ = writeln!(s, "edge_hidden = {}", t.edge_hidden);
        let _ = writeln!(s, "node_dim = {}", t.node_dim);
        let _ = writeln!(s, "gnn_rounds = {}", t.gnn_rounds);
        let _ = writeln!(s, "drgn_hidden = {}", t.drgn_hidden);
        match &self.data {
            DataSource::Dirs { source_dir, target_dir } => {
                let _ = writeln!(s, "source_dir = {}", source_dir.display());
                let _ = writeln!(s, "target_dir = {}", target_dir.display());
            }
            DataSource::Synthetic { seed, classes_source, classes_target, per_class, dim, shift } => {
                let _ = writeln!(s, "synth_seed = {seed}");
                let _ = writeln!(s, "synth_classes_source = {classes_source}");
                let _ = writeln!(s, "synth_classes_target = {classes_target}");
                let _ = writeln!(s, "synth_per_class = {per_class}");
                let _ = writeln!(s, "synth_dim = {dim}");
                let _ = writeln!(s, "synth_rotation_deg = {}", shift.rotation_deg);
                let _ = writeln!(s, "synth_translation = {}", shift.translation);
                let _ = writeln!(s, "synth_spread = {}", shift.spread);
            }
        }
        let _ = writeln!(s, "aux_classes = {}", self.split.aux_classes);
        let _ = writeln!(s, "novel_classes = {}", self.split.novel_classes);
        if let Some(cap) = self.split.aux_cap_per_class {
            let _ = writeln!(s, "aux_cap_per_class = {cap}");
        }
        let _ = writeln!(s, "split_seed = {}", self.split.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        if let Some(every) = self.checkpoint_every {
            let _ = writeln!(s, "checkpoint_every = {every}");
        }
        let _ = writeln!(s, "eval_episodes = {}", self.eval_episodes);
        let _ = writeln!(s, "eval_seed = {}", self.eval_seed);
        let _ = writeln!(s, "eval_n_query = {}", self.eval_n_query);
        s
    }
}

pub fn parse_variant(text: &str) -> Result<Variant, String> {
    match text {
        "tgdm" => Ok(Variant::Tgdm),
        "m-base" => Ok(Variant::MBase),
        "base-m3t" => Ok(Variant::base_m3t()),
        "m3t-fixed" => Ok(Variant::M3TFixed { lambda: 0.5 }),
        other => Err(format!(
            "unknown variant `{other}` (expected tgdm, m-base, base-m3t, m3t-fixed)"
        )),
    }
}

struct RawEntry {
    line: usize,
    value: String,
    used: bool,
}

struct Entries(Vec<(String, RawEntry)>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<&RawEntry> {
        for (k, entry) in self.0.iter_mut() {
            if k == key {
                entry.used = true;
                return Some(&*entry);
            }
        }
        None
    }
}

fn usage(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config line {line}: {msg}"))
}

/// Parse a config text. Every key may appear at most once; unknown keys and
/// malformed values are reported with their line number.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut entries: Vec<(String, RawEntry)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(usage(line_no, format!("duplicate key `{key}`")));
        }
        entries.push((key, RawEntry { line: line_no, value, used: false }));
    }
    let mut entries = Entries(entries);

    fn field<T: std::str::FromStr>(
        entries: &mut Entries,
        key: &str,
        default: T,
    ) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match entries.take(key) {
            Some(entry) => entry.value.parse::<T>().map_err(|e| {
                usage(entry.line, format!("invalid value for `{key}`: `{}` ({e})", entry.value))
            }),
            None => Ok(default),
        }
    }

    fn opt_field<T: std::str::FromStr>(
        entries: &mut Entries,
        key: &str,
    ) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match entries.take(key) {
            Some(entry) => entry.value.parse::<T>().map(Some).map_err(|e| {
                usage(entry.line, format!("invalid value for `{key}`: `{}` ({e})", entry.value))
            }),
            None => Ok(None),
        }
    }

    let seed: u64 = match entries.take("seed") {
        Some(entry) => entry.value.parse().map_err(|e| {
            usage(entry.line, format!("invalid value for `seed`: `{}` ({e})", entry.value))
        })?,
        None => return Err(CliError::Usage("config: missing mandatory key `seed`".into())),
    };

    let defaults = TrainConfig::default();
    let mut train = TrainConfig { seed, ..defaults };
    train.iterations = field(&mut entries, "iterations", train.iterations)?;
    train.n_way = field(&mut entries, "n_way", train.n_way)?;
    train.k_shot = field(&mut entries, "k_shot", train.k_shot)?;
    train.n_query = field(&mut entries, "n_query", train.n_query)?;
    train.lr_theta = field(&mut entries, "lr_theta", train.lr_theta)?;
    train.lr_omega = field(&mut entries, "lr_omega", train.lr_omega)?;
    train.weight_decay_omega =
        field(&mut entries, "weight_decay_omega", train.weight_decay_omega)?;
    train.inner_step_size = field(&mut entries, "inner_step_size", train.inner_step_size)?;
    train.weights = LossWeights {
        alpha0: field(&mut entries, "alpha0", train.weights.alpha0)?,
        alpha1: field(&mut entries, "alpha1", train.weights.alpha1)?,
        alpha2: field(&mut entries, "alpha2", train.weights.alpha2)?,
    };
    train.log_every = field(&mut entries, "log_every", train.log_every)?;
    train.extractor_hidden = field(&mut entries, "extractor_hidden", train.extractor_hidden)?;
    train.feature_dim = field(&mut entries, "feature_dim", train.feature_dim)?;
    train.edge_hidden = field(&mut entries, "edge_hidden", train.edge_hidden)?;
    train.node_dim = field(&mut entries, "node_dim", train.node_dim)?;
    train.gnn_rounds = field(&mut entries, "gnn_rounds", train.gnn_rounds)?;
    train.drgn_hidden = field(&mut entries, "drgn_hidden", train.drgn_hidden)?;

    if let Some(entry) = entries.take("variant") {
        let line = entry.line;
        train.variant =
            parse_variant(&entry.value).map_err(|e| usage(line, e))?;
    }
    if let Some(lambda) = opt_field::<f64>(&mut entries, "lambda")? {
        match train.variant {
            Variant::M3TFixed { .. } => train.variant = Variant::M3TFixed { lambda },
            _ => {
                return Err(CliError::Usage(
                    "config: `lambda` is only valid with `variant = m3t-fixed`".into(),
                ))
            }
        }
    }
    let beta_a = opt_field::<f64>(&mut entries, "beta_a")?;
    let beta_b = opt_field::<f64>(&mut entries, "beta_b")?;
    if beta_a.is_some() || beta_b.is_some() {
        match train.variant {
            Variant::BaseM3T { alpha, beta } => {
                train.variant = Variant::BaseM3T {
                    alpha: beta_a.unwrap_or(alpha),
                    beta: beta_b.unwrap_or(beta),
                };
            }
            _ => {
                return Err(CliError::Usage(
                    "config: `beta_a`/`beta_b` are only valid with `variant = base-m3t`".into(),
                ))
            }
        }
    }

    let source_dir: Option<PathBuf> = opt_field(&mut entries, "source_dir")?;
    let target_dir: Option<PathBuf> = opt_field(&mut entries, "target_dir")?;
    let synth_classes_source: Option<usize> = opt_field(&mut entries, "synth_classes_source")?;
    let data = match (source_dir, target_dir) {
        (Some(source_dir), Some(target_dir)) => {
            if synth_classes_source.is_some() {
                return Err(CliError::Usage(
                    "config: give either dataset directories or synth_* keys, not both".into(),
                ));
            }
            DataSource::Dirs { source_dir, target_dir }
        }
        (None, None) => DataSource::Synthetic {
            seed: field(&mut entries, "synth_seed", seed)?,
            classes_source: synth_classes_source.unwrap_or(20),
            classes_target: field(&mut entries, "synth_classes_target", 12)?,
            per_class: field(&mut entries, "synth_per_class", 50)?,
            dim: field(&mut entries, "synth_dim", 16)?,
            shift: DomainShiftSpec {
                rotation_deg: field(&mut entries, "synth_rotation_deg", 45.0)?,
                translation: field(&mut entries, "synth_translation", 2.5)?,
                spread: field(&mut entries, "synth_spread", 0.35)?,
            },
        },
        _ => {
            return Err(CliError::Usage(
                "config: `source_dir` and `target_dir` must be given together".into(),
            ))
        }
    };

    let split = SplitConfig {
        aux_classes: field(&mut entries, "aux_classes", 5)?,
        novel_classes: field(&mut entries, "novel_classes", 7)?,
        aux_cap_per_class: opt_field(&mut entries, "aux_cap_per_class")?,
        seed: field(&mut entries, "split_seed", seed)?,
        aux_list: None,
        novel_list: None,
    };

    let out_dir: PathBuf = field(&mut entries, "out_dir", PathBuf::from("runs/run"))?;
    let checkpoint_every: Option<usize> = opt_field(&mut entries, "checkpoint_every")?;
    let eval_episodes: usize = field(&mut entries, "eval_episodes", 600)?;
    let eval_seed: u64 = field(&mut entries, "eval_seed", seed)?;
    let eval_n_query: usize = field(&mut entries, "eval_n_query", 15)?;

    if let Some((key, entry)) = entries.0.iter().find(|(_, e)| !e.used) {
        return Err(usage(entry.line, format!("unknown key `{key}`")));
    }

    let cfg = RunConfig {
        train,
        data,
        split,
        out_dir,
        checkpoint_every,
        eval_episodes,
        eval_seed,
        eval_n_query,
    };
    cfg.train.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\n";

    #[test]
    fn defaults_fill_everything_but_seed() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.lr_theta, 0.001);
        assert_eq!(cfg.train.lr_omega, 0.0001);
        assert_eq!(cfg.train.weight_decay_omega, 1e-5);
        assert_eq!(cfg.eval_episodes, 600);
        assert!(matches!(cfg.data, DataSource::Synthetic { .. }));
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        let err = parse_config("iterations = 10\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let err = parse_config("seed = 1\nlr_thta = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("lr_thta"), "{msg}");
    }

    #[test]
    fn bad_value_is_rejected_with_line_number() {
        let err = parse_config("seed = 1\n\niterations = soon\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("iterations"), "{msg}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config("# run\nseed = 3 # trailing\n\nn_way = 4\n").unwrap();
        assert_eq!(cfg.train.n_way, 4);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_config("seed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn lambda_requires_fixed_variant() {
        let err = parse_config("seed = 1\nlambda = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("m3t-fixed"), "{err}");
        let cfg = parse_config("seed = 1\nvariant = m3t-fixed\nlambda = 0.61\n").unwrap();
        assert_eq!(cfg.train.variant, Variant::M3TFixed { lambda: 0.61 });
    }

    #[test]
    fn config_text_roundtrips() {
        let text = "seed = 9\nvariant = m3t-fixed\nlambda = 0.57\nn_query = 5\n\
                    synth_rotation_deg = 30\naux_cap_per_class = 18\ncheckpoint_every = 50\n\
                    out_dir = runs/exp1\n";
        let cfg = parse_config(text).unwrap();
        let round = parse_config(&cfg.to_config_text()).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn dirs_and_synth_are_mutually_exclusive() {
        let err = parse_config(
            "seed = 1\nsource_dir = a\ntarget_dir = b\nsynth_classes_source = 5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("not both"), "{err}");
        let err = parse_config("seed = 1\nsource_dir = a\n").unwrap_err();
        assert!(err.to_string().contains("together"), "{err}");
    }
}
