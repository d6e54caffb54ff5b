use rand::Rng;

use super::layers::{Bound, Linear, Params};
use super::{Activation, CorrelationScope, ScoreHead, TrainingConfig};
use crate::copula::{self, NoiseConstruction};
use crate::samplers::MaskMode;
use crate::tensor::{self, Tensor};
use crate::Scalar;

/// Floor added to `|σ|` so the noise-level covariance stays definite.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Floor added to top-k scores so every WRS weight is positive.
pub const SCORE_FLOOR: f64 = 1e-6;

/// Three-layer MLP `d → h_c → h_c → d` producing scores, plus the factor
/// head `W_L: h_c → d·p` and (binary mode) the noise head `W_σ: h_c → d`.
#[derive(Debug, Clone)]
pub struct ChoiceNet {
    pub d: usize,
    pub p: usize,
    pub mode: MaskMode,
    pub activation: Activation,
    pub score_head: ScoreHead,
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub score: Linear,
    pub factor: Linear,
    pub sigma: Option<Linear>,
}

/// Per-sample outputs for a `[B, d]` input.
#[derive(Debug, Clone, Copy)]
pub struct ChoiceOutput<'t, T: Scalar> {
    /// `[B, d]`
    pub alpha: Tensor<'t, T>,
    /// `[B, d, p]`
    pub factor: Tensor<'t, T>,
    /// `[B]`, binary mode only.
    pub sigma: Option<Tensor<'t, T>>,
}

impl ChoiceNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        config: &TrainingConfig,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let h = config.hidden_choice;
        let p = config.factor_columns(d);
        let hidden1 = Linear::new(params, "choice.hidden1", d, h, true, rng);
        let hidden2 = Linear::new(params, "choice.hidden2", h, h, true, rng);
        let score = Linear::new(params, "choice.score", h, d, true, rng);
        let factor = Linear::new(params, "choice.factor", h, d * p, false, rng);
        let sigma = (config.mode == MaskMode::Binary)
            .then(|| Linear::new(params, "choice.sigma", h, d, false, rng));
        Self {
            d,
            p,
            mode: config.mode,
            activation: config.activation,
            score_head: config.score_head,
            hidden1,
            hidden2,
            score,
            factor,
            sigma,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        bound: &Bound<'t, T>,
        x: Tensor<'t, T>,
    ) -> tensor::Result<ChoiceOutput<'t, T>> {
        let b = x.shape()[0];
        let h = self.activation.apply(self.hidden1.forward(bound, x)?)?;
        let hidden = self.activation.apply(self.hidden2.forward(bound, h)?)?;
        let raw = self.score.forward(bound, hidden)?;
        let alpha = match (self.mode, self.score_head) {
            (MaskMode::Topk, _) => raw.softplus()?.add_scalar(T::lit(SCORE_FLOOR))?,
            (MaskMode::Binary, ScoreHead::Linear) => raw,
            (MaskMode::Binary, ScoreHead::Sigmoid) => raw.sigmoid()?,
        };
        let factor = self
            .factor
            .forward(bound, hidden)?
            .relu()?
            .reshape(&[b, self.d, self.p])?;
        let sigma = match &self.sigma {
            Some(head) => Some(
                head.forward(bound, hidden)?
                    .tanh()?
                    .mean_axis(1)?
                    .abs()?
                    .add_scalar(T::lit(SIGMA_FLOOR))?,
            ),
            None => None,
        };
        Ok(ChoiceOutput {
            alpha,
            factor,
            sigma,
        })
    }

    /// Correlated uniform noise `[B, d]` from the standard normal `zeta`
    /// (`[B, config.noise_dim(d)]`).
    /// With `nola` set the copula is bypassed and `u = Φ(ζ)`.
    pub fn noise<'t, T: Scalar>(
        &self,
        out: &ChoiceOutput<'t, T>,
        zeta: Tensor<'t, T>,
        config: &TrainingConfig,
    ) -> tensor::Result<Tensor<'t, T>> {
        if config.nola {
            return copula::uniform(zeta);
        }
        let (factor, sigma) = match config.correlation_scope {
            CorrelationScope::Sample => (out.factor, out.sigma),
            CorrelationScope::Batch => (
                out.factor.mean_axis(0)?.reshape(&[1, self.d, self.p])?,
                match out.sigma {
                    Some(s) => Some(s.mean()?.reshape(&[1])?),
                    None => None,
                },
            ),
        };
        if config.noise_construction == NoiseConstruction::Factor {
            let sigma = sigma.filter(|_| self.mode == MaskMode::Binary);
            return Ok(copula::factor_uniform(factor, sigma, T::lit(config.tau), zeta)?.1);
        }
        let cov = match (self.mode, sigma) {
            (MaskMode::Binary, Some(s)) => copula::covariance_noise_level(factor, s)?,
            _ => copula::covariance_scaled(factor, T::lit(config.tau))?,
        };
        let corr = copula::normalize(cov)?;
        let (_, u) = match config.correlation_scope {
            CorrelationScope::Sample => copula::correlated_uniform(corr, zeta)?,
            CorrelationScope::Batch => copula::correlated_uniform_shared(corr, zeta)?,
        };
        Ok(u)
    }
}
