//! Selector and predictor networks and their joint training.
//!
//! A forward pass runs ChoiceNet on `x` to get scores `α` and a factor
//! model, turns standard normal noise into correlated uniforms through the
//! copula, relaxes the mask with the configured sampler, and feeds
//! `x ⊙ z̃` to PredictNet.

mod adam;
mod checkpoint;
mod choice;
mod inference;
mod layers;
mod loss;
mod predict;
mod train;

pub use adam::{Adam, AdamConfig, WeightDecay};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use choice::{ChoiceNet, ChoiceOutput, SCORE_FLOOR, SIGMA_FLOOR};
pub use inference::{infer_masks, predict_proba, scores, MaskBatch};
pub use layers::{uniform_init, Bound, Linear, ParamId, Params};
pub use loss::{cross_entropy, loss_binary, loss_topk};
pub use predict::PredictNet;
pub use train::{noise_for_batch, train, EpochLog, StepOutput, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{NoiseConstruction, RankMode};
use crate::error::{invalid, Result};
use crate::samplers::{MaskMode, SamplerParams};
use crate::tensor::{self, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Selu,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: Tensor<'t, T>) -> tensor::Result<Tensor<'t, T>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Selu => x.selu(),
        }
    }
}

/// Output transform of the binary-mode score layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreHead {
    /// Scores are the raw layer output, i.e. the logit of `P(z = 1)`.
    Linear,
    /// Scores are squashed into (0, 1).
    Sigmoid,
}

/// Whether each sample gets its own correlation matrix or the batch shares
/// one built from the batch-mean factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationScope {
    Sample,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryInference {
    /// `round(logistic(α))`
    Deterministic,
    /// One Bernoulli draw per feature with probability `logistic(α)`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: MaskMode,
    #[serde(flatten)]
    pub sampler: SamplerParams,
    /// Correlation magnitude in top-k mode.
    pub tau: f64,
    pub hidden_choice: usize,
    pub hidden_predict: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    #[serde(default)]
    pub weight_decay_mode: WeightDecay,
    pub rank_mode: RankMode,
    /// Columns of the factor matrix in low-rank mode.
    pub factor_rank: usize,
    pub activation: Activation,
    pub score_head: ScoreHead,
    /// Replace the copula with independent noise.
    pub nola: bool,
    #[serde(default)]
    pub noise_construction: NoiseConstruction,
    pub correlation_scope: CorrelationScope,
    pub binary_inference: BinaryInference,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: MaskMode::Binary,
            sampler: SamplerParams {
                t: 3.0,
                delta: crate::samplers::DEFAULT_DELTA,
                k: 1,
                lambda: 0.1,
            },
            tau: 1.0,
            hidden_choice: 100,
            hidden_predict: 200,
            learning_rate: 1e-4,
            batch_size: 1000,
            epochs: 1000,
            weight_decay: 1e-3,
            weight_decay_mode: WeightDecay::Decoupled,
            rank_mode: RankMode::Full,
            factor_rank: 1,
            activation: Activation::Relu,
            score_head: ScoreHead::Linear,
            nola: false,
            noise_construction: NoiseConstruction::Cholesky,
            correlation_scope: CorrelationScope::Sample,
            binary_inference: BinaryInference::Deterministic,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Columns of the factor matrix for `d` features.
    pub fn factor_columns(&self, d: usize) -> usize {
        match self.rank_mode {
            RankMode::Full => d,
            RankMode::Low => self.factor_rank,
        }
    }

    /// Standard normal draws per sample consumed by the noise path.
    pub fn noise_dim(&self, d: usize) -> usize {
        if self.nola {
            d
        } else {
            self.noise_construction.noise_dim(d, self.factor_columns(d))
        }
    }

    pub fn validate(&self, d: usize, n_classes: usize) -> Result<()> {
        let k_bound = (self.mode == MaskMode::Topk).then_some(d);
        self.sampler.validate(k_bound)?;
        if d == 0 {
            return Err(invalid("d", "dataset has no features"));
        }
        if n_classes < 2 {
            return Err(invalid("n_classes", format!("need at least 2 classes, got {n_classes}")));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch_size", "batch norm needs at least 2 samples"));
        }
        if self.hidden_choice == 0 || self.hidden_predict == 0 {
            return Err(invalid("hidden", "layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", format!("{}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", format!("{}", self.weight_decay)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("must be non-negative, got {}", self.tau)));
        }
        if self.rank_mode == RankMode::Low && !(1..=d).contains(&self.factor_rank) {
            return Err(invalid(
                "factor_rank",
                format!("must lie in 1..={d}, got {}", self.factor_rank),
            ));
        }
        Ok(())
    }
}

/// ChoiceNet and PredictNet sharing one parameter set.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: TrainingConfig,
    pub d: usize,
    pub n_classes: usize,
    pub params: Params<T>,
    pub choice: ChoiceNet,
    pub predict: PredictNet<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with seeded fan-in uniform initialisation.
    pub fn new(config: &TrainingConfig, d: usize, n_classes: usize) -> Result<Self> {
        config.validate(d, n_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        let mut params = Params::new();
        let choice = ChoiceNet::new(&mut params, config, d, &mut rng);
        let predict = PredictNet::new(&mut params, config, d, n_classes, &mut rng);
        Ok(Self {
            config: config.clone(),
            d,
            n_classes,
            params,
            choice,
            predict,
        })
    }

    /// Training-mode forward pass and loss for one batch with fixed noise.
    ///
    /// `zeta` is the `[B, config.noise_dim(d)]` standard normal draw that
    /// drives the copula.
    pub fn forward_loss<'t>(
        &mut self,
        bound: &Bound<'t, T>,
        x: Tensor<'t, T>,
        y: &[usize],
        zeta: Tensor<'t, T>,
    ) -> tensor::Result<StepOutput<'t, T>> {
        let out = self.choice.forward(bound, x)?;
        let u = self.choice.noise(&out, zeta, &self.config)?;
        let s = &self.config.sampler;
        let soft = match self.config.mode {
            MaskMode::Binary => crate::samplers::binary_relaxed(out.alpha, u, T::lit(s.t))?,
            MaskMode::Topk => {
                crate::samplers::topk_relaxed(out.alpha, u, T::lit(s.t), T::lit(s.delta), s.k)?
            }
        };
        let log_probs = self.predict.forward(bound, x.mul(soft)?, true)?;
        let loss = match self.config.mode {
            MaskMode::Binary => loss_binary(log_probs, y, soft, T::lit(s.lambda))?,
            MaskMode::Topk => loss_topk(log_probs, y)?,
        };
        Ok(StepOutput {
            loss,
            soft,
            log_probs,
        })
    }
}
