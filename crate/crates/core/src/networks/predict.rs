use ndarray::ArrayD;
use rand::Rng;

use super::layers::{Bound, Linear, ParamId, Params};
use super::{Activation, TrainingConfig};
use crate::tensor::{self, BatchNormState, Tensor};
use crate::Scalar;

/// `d → h_p → h_p → C` classifier with batch norm after each hidden
/// activation and a log-softmax output.
#[derive(Debug, Clone)]
pub struct PredictNet<T: Scalar> {
    pub activation: Activation,
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub output: Linear,
    /// `(scale, shift)` per batch-norm layer.
    pub norm_params: [(ParamId, ParamId); 2],
    pub norm_state: [BatchNormState<T>; 2],
}

impl<T: Scalar> PredictNet<T> {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params<T>,
        config: &TrainingConfig,
        d: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Self {
        let h = config.hidden_predict;
        let hidden1 = Linear::new(params, "predict.hidden1", d, h, true, rng);
        let bn1 = (
            params.push("predict.norm1.scale", ArrayD::ones(vec![h])),
            params.push("predict.norm1.shift", ArrayD::zeros(vec![h])),
        );
        let hidden2 = Linear::new(params, "predict.hidden2", h, h, true, rng);
        let bn2 = (
            params.push("predict.norm2.scale", ArrayD::ones(vec![h])),
            params.push("predict.norm2.shift", ArrayD::zeros(vec![h])),
        );
        let output = Linear::new(params, "predict.output", h, n_classes, true, rng);
        Self {
            activation: config.activation,
            hidden1,
            hidden2,
            output,
            norm_params: [bn1, bn2],
            norm_state: [BatchNormState::new(h), BatchNormState::new(h)],
        }
    }

    /// Log-probabilities `[B, C]`. Training mode normalises with batch
    /// statistics and updates the running estimates.
    pub fn forward<'t>(
        &mut self,
        bound: &Bound<'t, T>,
        x: Tensor<'t, T>,
        training: bool,
    ) -> tensor::Result<Tensor<'t, T>> {
        let mut h = x;
        for (i, layer) in [self.hidden1, self.hidden2].into_iter().enumerate() {
            let a = self.activation.apply(layer.forward(bound, h)?)?;
            let (scale, shift) = self.norm_params[i];
            h = a.batch_norm(&mut self.norm_state[i], bound[scale], bound[shift], training)?;
        }
        self.output.forward(bound, h)?.log_softmax()
    }
}
