//! Experiment configuration and the shipped presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::copula::{NoiseConstruction, RankMode};
use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::networks::{CorrelationScope, TrainingConfig};
use crate::samplers::MaskMode;
use crate::synthetic::{self, Family, SyntheticSpec};
use crate::idx;

/// Where the training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// CSV files in the dataset layout; without a test file the last 10% of
    /// a seeded shuffle is held out.
    Csv { train: PathBuf, test: Option<PathBuf> },
}

impl DataSource {
    /// `(train, test)`
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic(spec) => synthetic::generate(spec),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((
                idx::read_idx(train_images, train_labels)?,
                idx::read_idx(test_images, test_labels)?,
            )),
            DataSource::Csv { train, test } => {
                let train = Dataset::read_csv(train)?;
                match test {
                    Some(p) => {
                        let mut test = Dataset::read_csv(p)?;
                        let c = train.n_classes.max(test.n_classes);
                        test.n_classes = c;
                        Ok((Dataset { n_classes: c, ..train }, test))
                    }
                    None => train.split(0.1, seed),
                }
            }
        }
    }
}

/// λ values tried by the validation search.
pub const LAMBDA_GRID: [f64; 4] = [0.1, 0.5, 1.0, 1.5];
/// Share of the training set held out when searching λ.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub training: TrainingConfig,
    pub data: DataSource,
    /// Candidate λ values; empty means train once with `training.sampler.lambda`.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Evaluate test metrics every this many epochs (and after the last).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Write per-sample hard masks after training.
    #[serde(default)]
    pub export_masks: bool,
}

fn default_validation() -> f64 {
    VALIDATION_FRACTION
}

fn default_eval_every() -> usize {
    10
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, training: TrainingConfig, data: DataSource) -> Self {
        Self {
            name: name.into(),
            training,
            data,
            lambda_grid: Vec::new(),
            validation_fraction: VALIDATION_FRACTION,
            eval_every: default_eval_every(),
            export_masks: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if self.lambda_grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(invalid("lambda_grid", "values must be non-negative"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(invalid(
                "validation_fraction",
                format!("must lie in (0, 1), got {}", self.validation_fraction),
            ));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every", "must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Sets the seed of both the training run and generated data.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.training.seed = seed;
        if let DataSource::Synthetic(spec) = &mut self.data {
            spec.seed = seed;
        }
        self
    }
}

/// Sparsity penalty of the 11-d synthetic presets. The penalty is summed over
/// features, so [`synthetic_lambda`] scales it by `11 / d`.
pub fn base_lambda(family: Family) -> f64 {
    match family {
        Family::Syn1 => 0.01,
        _ => 0.003,
    }
}

pub fn synthetic_lambda(family: Family, d: usize) -> f64 {
    base_lambda(family) * synthetic::MIN_DIM as f64 / d as f64
}

/// Columns of the low-rank factor used by the 100-d presets.
pub const WIDE_FACTOR_RANK: usize = 5;

/// Binary-mode synthetic experiment with the synthetic-benchmark settings:
/// `h_c = 100`, `h_p = 200`, learning rate 1e-4, batch 1000, `t = 3`,
/// 1000 epochs, weight decay 1e-3. Wide presets (`d > 11`) draw the copula
/// noise from a rank-5 factor without a Cholesky factorisation.
pub fn synthetic_preset(family: Family, d: usize, correlated: bool) -> ExperimentConfig {
    let mut training = TrainingConfig::default();
    training.sampler.lambda = synthetic_lambda(family, d);
    if d > synthetic::MIN_DIM {
        training.rank_mode = RankMode::Low;
        training.factor_rank = WIDE_FACTOR_RANK;
        training.noise_construction = NoiseConstruction::Factor;
    }
    let spec = SyntheticSpec {
        family,
        d,
        correlated,
        ..SyntheticSpec::default()
    };
    let name = format!("{family}-{d}d{}", if correlated { "-corr" } else { "" });
    ExperimentConfig::new(name, training, DataSource::Synthetic(spec))
}

/// Top-k MNIST ranking: `h_c = h_p = 16`, learning rate 1e-3, batch 1000,
/// `t = 1`, 100 epochs, full-rank factor shared across each batch.
pub fn mnist_preset(k: usize, dir: &Path) -> ExperimentConfig {
    let mut training = TrainingConfig {
        mode: MaskMode::Topk,
        hidden_choice: 16,
        hidden_predict: 16,
        learning_rate: 1e-3,
        batch_size: 1000,
        epochs: 100,
        rank_mode: RankMode::Full,
        correlation_scope: CorrelationScope::Batch,
        ..TrainingConfig::default()
    };
    training.sampler.t = 1.0;
    training.sampler.k = k;
    training.sampler.lambda = 0.0;
    let data = DataSource::Idx {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
    };
    let mut cfg = ExperimentConfig::new(format!("mnist-topk-k{k}"), training, data);
    cfg.eval_every = 1;
    cfg
}

/// Names accepted by [`preset`].
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for f in Family::ALL {
        names.push(format!("{f}-11d"));
        names.push(format!("{f}-100d"));
        names.push(format!("{f}-100d-corr"));
    }
    names.push("mnist-topk".into());
    names
}

/// Looks up a preset by name. `mnist-topk` reads IDX files from `mnist_dir`
/// and selects `k = 40` features.
pub fn preset(name: &str, mnist_dir: &Path) -> Result<ExperimentConfig> {
    if name == "mnist-topk" {
        return Ok(mnist_preset(40, mnist_dir));
    }
    let unknown = || invalid("preset", format!("unknown preset {name:?}; known: {}", preset_names().join(", ")));
    let mut parts = name.split('-');
    let family: Family = parts.next().ok_or_else(unknown)?.parse().map_err(|_| unknown())?;
    let d = match parts.next() {
        Some("11d") => 11,
        Some("100d") => 100,
        _ => return Err(unknown()),
    };
    let correlated = match parts.next() {
        None => false,
        Some("corr") if d == 100 => true,
        _ => return Err(unknown()),
    };
    if parts.next().is_some() {
        return Err(unknown());
    }
    Ok(synthetic_preset(family, d, correlated))
}
