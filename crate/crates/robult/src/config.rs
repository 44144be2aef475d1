//! Run configuration: one flat `key = value` file drives data generation,
//! training, and the ablation switches. Parsing is strict (unknown or
//! duplicated keys are errors, not warnings) and [`RunConfig::echo`] prints
//! a canonical listing that parses back to the identical configuration, so
//! every report can embed the exact settings that produced it.

use std::collections::HashSet;
use std::path::PathBuf;

use crate::error::{Result, RobultError};
use crate::model::ModelSpec;
use crate::synthdata::{SynthSpec, TaskKind};

/// Weighting kernel family for pseudo-positive candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    Rbf,
    L1,
    L2,
}

/// RBF bandwidth: resolved per batch from the labeled-positive proximity
/// spread, or pinned to a value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaSetting {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // Task and data.
    pub task: TaskKind,
    pub raw_dims: Vec<usize>,
    pub samples: usize,
    /// Shared-signal strength in the generator.
    pub alpha: f64,
    /// Per-modality unique-signal strength.
    pub betas: Vec<f64>,
    /// Fold a two-modality interaction bit into the label.
    pub synergy: bool,
    /// Let active unique bits pick subclasses instead of shifting the label.
    pub aux_subclass: bool,
    pub noise_sigma: f64,
    /// When set, load this dataset instead of generating one.
    pub dataset_path: Option<PathBuf>,

    // Model and optimization.
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub kernel: KernelChoice,
    pub rbf_gamma: GammaSetting,
    /// Drop pseudo candidates below the batch's 25% weight quantile.
    pub weight_percentile_filter: bool,
    /// Fraction of rows whose labels are visible to training.
    pub label_ratio: f64,
    pub seed: u64,

    // Loss-term multipliers.
    pub weight_sup: f64,
    pub weight_rec: f64,
    pub weight_lb: f64,
    pub weight_ulb: f64,

    // Ablation switches.
    pub drop_sup: bool,
    pub drop_rec: bool,
    pub drop_lb: bool,
    pub drop_ulb: bool,
    pub uniform_weights: bool,
    pub drop_pseudo: bool,
    pub drop_unique_branches: bool,
    /// Widen the contrastive toggle group to include the unique heads.
    pub algorithm1_toggle_reading: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            task: TaskKind::Classification { classes: 4 },
            raw_dims: vec![16, 12, 20],
            samples: 2000,
            alpha: 1.0,
            betas: vec![0.5, 0.5, 0.5],
            synergy: false,
            aux_subclass: false,
            noise_sigma: 0.5,
            dataset_path: None,
            latent_dim: 60,
            epochs: 40,
            batch_size: 64,
            learning_rate: 1e-3,
            temperature: 0.1,
            kernel: KernelChoice::Rbf,
            rbf_gamma: GammaSetting::Auto,
            weight_percentile_filter: false,
            label_ratio: 0.05,
            seed: 7,
            weight_sup: 1.0,
            weight_rec: 1.0,
            weight_lb: 1.0,
            weight_ulb: 1.0,
            drop_sup: false,
            drop_rec: false,
            drop_lb: false,
            drop_ulb: false,
            uniform_weights: false,
            drop_pseudo: false,
            drop_unique_branches: false,
            algorithm1_toggle_reading: false,
        }
    }
}

const KEYS: &[&str] = &[
    "task",
    "classes",
    "raw_dims",
    "samples",
    "alpha",
    "betas",
    "synergy",
    "aux_subclass",
    "noise_sigma",
    "dataset_path",
    "latent_dim",
    "epochs",
    "batch_size",
    "learning_rate",
    "temperature",
    "kernel",
    "rbf_gamma",
    "weight_percentile_filter",
    "label_ratio",
    "seed",
    "weight_sup",
    "weight_rec",
    "weight_lb",
    "weight_ulb",
    "drop_sup",
    "drop_rec",
    "drop_lb",
    "drop_ulb",
    "uniform_weights",
    "drop_pseudo",
    "drop_unique_branches",
    "algorithm1_toggle_reading",
];

fn bad_value(key: &str, value: &str, want: &str) -> RobultError {
    RobultError::Config(format!(
        "config key \"{key}\": expected {want}, got \"{value}\""
    ))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad_value(key, value, "a finite number"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|part| parse_usize(key, part.trim()))
        .collect()
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|part| parse_f64(key, part.trim()))
        .collect()
}

impl RunConfig {
    /// Parse a flat `key = value` configuration. Blank lines and lines
    /// starting with `#` are ignored; every other line must set a known key
    /// exactly once. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        let mut seen: HashSet<&str> = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RobultError::Config(format!(
                    "config line {}: expected \"key = value\", got \"{line}\"",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(RobultError::Config(format!(
                    "unknown config key \"{key}\" on line {}",
                    lineno + 1
                )));
            }
            if !seen.insert(key) {
                return Err(RobultError::Config(format!(
                    "duplicate config key \"{key}\" on line {}",
                    lineno + 1
                )));
            }
            pairs.push((key, value));
        }

        let mut cfg = RunConfig::default();
        let mut classes: Option<usize> = None;
        let mut task_name: Option<&str> = None;
        let mut betas_set = false;
        for (key, value) in pairs {
            match key {
                "task" => task_name = Some(value),
                "classes" => classes = Some(parse_usize(key, value)?),
                "raw_dims" => cfg.raw_dims = parse_usize_list(key, value)?,
                "samples" => cfg.samples = parse_usize(key, value)?,
                "alpha" => cfg.alpha = parse_f64(key, value)?,
                "betas" => {
                    cfg.betas = parse_f64_list(key, value)?;
                    betas_set = true;
                }
                "synergy" => cfg.synergy = parse_bool(key, value)?,
                "aux_subclass" => cfg.aux_subclass = parse_bool(key, value)?,
                "noise_sigma" => cfg.noise_sigma = parse_f64(key, value)?,
                "dataset_path" => {
                    cfg.dataset_path = if value.is_empty() {
                        None
                    } else {
                        Some(PathBuf::from(value))
                    }
                }
                "latent_dim" => cfg.latent_dim = parse_usize(key, value)?,
                "epochs" => cfg.epochs = parse_usize(key, value)?,
                "batch_size" => cfg.batch_size = parse_usize(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_f64(key, value)?,
                "temperature" => cfg.temperature = parse_f64(key, value)?,
                "kernel" => {
                    cfg.kernel = match value {
                        "rbf" => KernelChoice::Rbf,
                        "l1" => KernelChoice::L1,
                        "l2" => KernelChoice::L2,
                        _ => return Err(bad_value(key, value, "rbf, l1, or l2")),
                    }
                }
                "rbf_gamma" => {
                    cfg.rbf_gamma = if value == "auto" {
                        GammaSetting::Auto
                    } else {
                        GammaSetting::Fixed(parse_f64(key, value)?)
                    }
                }
                "weight_percentile_filter" => {
                    cfg.weight_percentile_filter = parse_bool(key, value)?
                }
                "label_ratio" => cfg.label_ratio = parse_f64(key, value)?,
                "seed" => cfg.seed = parse_u64(key, value)?,
                "weight_sup" => cfg.weight_sup = parse_f64(key, value)?,
                "weight_rec" => cfg.weight_rec = parse_f64(key, value)?,
                "weight_lb" => cfg.weight_lb = parse_f64(key, value)?,
                "weight_ulb" => cfg.weight_ulb = parse_f64(key, value)?,
                "drop_sup" => cfg.drop_sup = parse_bool(key, value)?,
                "drop_rec" => cfg.drop_rec = parse_bool(key, value)?,
                "drop_lb" => cfg.drop_lb = parse_bool(key, value)?,
                "drop_ulb" => cfg.drop_ulb = parse_bool(key, value)?,
                "uniform_weights" => cfg.uniform_weights = parse_bool(key, value)?,
                "drop_pseudo" => cfg.drop_pseudo = parse_bool(key, value)?,
                "drop_unique_branches" => cfg.drop_unique_branches = parse_bool(key, value)?,
                "algorithm1_toggle_reading" => {
                    cfg.algorithm1_toggle_reading = parse_bool(key, value)?
                }
                _ => unreachable!("key membership checked above"),
            }
        }

        match task_name {
            None | Some("classification") => {
                cfg.task = TaskKind::Classification {
                    classes: classes.unwrap_or(4),
                };
            }
            Some("regression") => {
                if classes.is_some() {
                    return Err(RobultError::Config(
                        "config key \"classes\" only applies to classification".into(),
                    ));
                }
                cfg.task = TaskKind::Regression;
            }
            Some(other) => {
                return Err(bad_value("task", other, "classification or regression"));
            }
        }

        // A single beta broadcasts across modalities; when only raw_dims
        // changed, rebroadcast the default as well.
        if cfg.betas.len() == 1 && cfg.raw_dims.len() > 1 {
            cfg.betas = vec![cfg.betas[0]; cfg.raw_dims.len()];
        } else if !betas_set && cfg.betas.len() != cfg.raw_dims.len() {
            cfg.betas = vec![0.5; cfg.raw_dims.len()];
        }

        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical listing of every setting, one `key = value` per line, in
    /// the documented key order. `parse(echo(cfg))` reproduces `cfg`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        match self.task {
            TaskKind::Classification { classes } => {
                line("task", "classification".into());
                line("classes", classes.to_string());
            }
            TaskKind::Regression => line("task", "regression".into()),
        }
        let join_usize =
            |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_f64 = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        line("raw_dims", join_usize(&self.raw_dims));
        line("samples", self.samples.to_string());
        line("alpha", format!("{:?}", self.alpha));
        line("betas", join_f64(&self.betas));
        line("synergy", self.synergy.to_string());
        line("aux_subclass", self.aux_subclass.to_string());
        line("noise_sigma", format!("{:?}", self.noise_sigma));
        if let Some(p) = &self.dataset_path {
            line("dataset_path", p.display().to_string());
        }
        line("latent_dim", self.latent_dim.to_string());
        line("epochs", self.epochs.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", format!("{:?}", self.learning_rate));
        line("temperature", format!("{:?}", self.temperature));
        line(
            "kernel",
            match self.kernel {
                KernelChoice::Rbf => "rbf",
                KernelChoice::L1 => "l1",
                KernelChoice::L2 => "l2",
            }
            .into(),
        );
        line(
            "rbf_gamma",
            match self.rbf_gamma {
                GammaSetting::Auto => "auto".into(),
                GammaSetting::Fixed(v) => format!("{v:?}"),
            },
        );
        line(
            "weight_percentile_filter",
            self.weight_percentile_filter.to_string(),
        );
        line("label_ratio", format!("{:?}", self.label_ratio));
        line("seed", self.seed.to_string());
        line("weight_sup", format!("{:?}", self.weight_sup));
        line("weight_rec", format!("{:?}", self.weight_rec));
        line("weight_lb", format!("{:?}", self.weight_lb));
        line("weight_ulb", format!("{:?}", self.weight_ulb));
        line("drop_sup", self.drop_sup.to_string());
        line("drop_rec", self.drop_rec.to_string());
        line("drop_lb", self.drop_lb.to_string());
        line("drop_ulb", self.drop_ulb.to_string());
        line("uniform_weights", self.uniform_weights.to_string());
        line("drop_pseudo", self.drop_pseudo.to_string());
        line("drop_unique_branches", self.drop_unique_branches.to_string());
        line(
            "algorithm1_toggle_reading",
            self.algorithm1_toggle_reading.to_string(),
        );
        out
    }

    pub fn modalities(&self) -> usize {
        self.raw_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(RobultError::Config(msg));
        if self.raw_dims.len() < 2 {
            return fail(format!(
                "raw_dims needs at least 2 modalities, got {}",
                self.raw_dims.len()
            ));
        }
        if self.raw_dims.iter().any(|&d| d == 0) {
            return fail("raw_dims entries must be positive".into());
        }
        if let TaskKind::Classification { classes } = self.task {
            if classes < 2 {
                return fail(format!("classes must be at least 2, got {classes}"));
            }
        }
        if self.samples < 4 {
            return fail(format!("samples must be at least 4, got {}", self.samples));
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.betas.len() != self.raw_dims.len() {
            return fail(format!(
                "betas has {} entries for {} modalities",
                self.betas.len(),
                self.raw_dims.len()
            ));
        }
        if self.betas.iter().any(|b| !(*b >= 0.0)) {
            return fail("betas entries must be non-negative".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return fail(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.batch_size < 2 {
            return fail(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.temperature > 0.0) {
            return fail(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if let GammaSetting::Fixed(v) = self.rbf_gamma {
            if !(v > 0.0) {
                return fail(format!("rbf_gamma must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.label_ratio) {
            return fail(format!(
                "label_ratio must lie in [0, 1], got {}",
                self.label_ratio
            ));
        }
        for (name, v) in [
            ("weight_sup", self.weight_sup),
            ("weight_rec", self.weight_rec),
            ("weight_lb", self.weight_lb),
            ("weight_ulb", self.weight_ulb),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Whether the unique heads receive any training signal under the
    /// current loss switches. Reconstruction and supervision are the only
    /// losses routed to them, so disabling both leaves the heads at their
    /// random initialization.
    pub fn unique_heads_trained(&self) -> bool {
        !(self.drop_rec && self.drop_sup)
    }

    /// Generator settings implied by this configuration.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            samples: self.samples,
            raw_dims: self.raw_dims.clone(),
            task: self.task,
            alpha: self.alpha,
            betas: self.betas.clone(),
            synergy: self.synergy,
            aux_subclass: self.aux_subclass,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    /// Model settings implied by this configuration.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            raw_dims: self.raw_dims.clone(),
            latent_dim: self.latent_dim,
            task: self.task,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn nondefault_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.task = TaskKind::Regression;
        cfg.raw_dims = vec![5, 9];
        cfg.betas = vec![0.0, 3.0];
        cfg.samples = 64;
        cfg.alpha = 0.25;
        cfg.synergy = true;
        cfg.dataset_path = Some(PathBuf::from("/tmp/data.tsv"));
        cfg.kernel = KernelChoice::L2;
        cfg.rbf_gamma = GammaSetting::Fixed(2.5);
        cfg.weight_percentile_filter = true;
        cfg.label_ratio = 1.0;
        cfg.weight_ulb = 0.0;
        cfg.drop_pseudo = true;
        cfg.algorithm1_toggle_reading = true;
        cfg.validate().unwrap();
        let back = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_blanks_and_partial_files() {
        let text = "# a comment\n\n  seed = 11\nepochs = 3\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, RunConfig::default().batch_size);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("mystery = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mystery") && msg.contains("line 1"), "got {msg}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "got {err}");
    }

    #[test]
    fn malformed_line_is_an_error() {
        let err = RunConfig::parse("just some words\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "got {err}");
    }

    #[test]
    fn bad_values_name_the_key() {
        for text in [
            "epochs = soon",
            "synergy = yes",
            "kernel = cubic",
            "task = ranking",
            "learning_rate = fast",
            "rbf_gamma = wide",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            let key = text.split('=').next().unwrap().trim();
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn single_beta_broadcasts() {
        let cfg = RunConfig::parse("raw_dims = 4,5,6,7\nbetas = 0.25\n").unwrap();
        assert_eq!(cfg.betas, vec![0.25; 4]);
        // Changing only raw_dims rebroadcasts the default.
        let cfg = RunConfig::parse("raw_dims = 4,5\n").unwrap();
        assert_eq!(cfg.betas, vec![0.5, 0.5]);
    }

    #[test]
    fn classes_rejected_for_regression() {
        let err = RunConfig::parse("task = regression\nclasses = 3\n").unwrap_err();
        assert!(err.to_string().contains("classes"), "got {err}");
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        for text in [
            "batch_size = 1",
            "temperature = 0",
            "label_ratio = 1.5",
            "raw_dims = 16",
            "classes = 1",
            "rbf_gamma = -1",
            "weight_rec = -0.5",
            "epochs = 0",
            "samples = 2",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text} should fail");
        }
    }

    #[test]
    fn betas_length_must_match_when_explicit() {
        let err = RunConfig::parse("raw_dims = 4,5,6\nbetas = 0.1,0.2\n").unwrap_err();
        assert!(err.to_string().contains("betas"), "got {err}");
    }
}
