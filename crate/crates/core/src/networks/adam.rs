use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::layers::Params;
use crate::error::{Error, Result};
use crate::Scalar;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecay {
    /// The parameter shrinks by `lr·wd·param` outside the moments.
    #[default]
    Decoupled,
    /// `wd·param` is added to the gradient before the moments (L2 penalty).
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub decay_mode: WeightDecay,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decay_mode: WeightDecay::Decoupled,
        }
    }
}

/// Bias-corrected Adam. With decoupled weight decay each step first shrinks
/// the parameter by `lr·wd·param`, then applies the Adam update; with
/// coupled decay `wd·param` joins the gradient.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<ArrayD<T>>,
    second: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &Params<T>) -> Self {
        let zeros: Vec<ArrayD<T>> = params.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn moments(&self) -> (&[ArrayD<T>], &[ArrayD<T>]) {
        (&self.first, &self.second)
    }

    pub fn update(&mut self, params: &mut Params<T>, grads: &[ArrayD<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                what: "gradients",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.values().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::LengthMismatch {
                    what: "gradient shape",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let correct1 = one - T::lit(c.beta1.powi(self.step as i32));
        let correct2 = one - T::lit(c.beta2.powi(self.step as i32));
        let lr = T::lit(c.learning_rate);
        let wd = T::lit(c.weight_decay);
        let (decay, l2) = match c.decay_mode {
            WeightDecay::Decoupled => (one - lr * wd, T::zero()),
            WeightDecay::Coupled => (one, wd),
        };
        let eps = T::lit(c.eps);
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + l2 * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
