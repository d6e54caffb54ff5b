use std::time::Instant;

use ndarray::{ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::{Model, TrainingConfig};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::Scalar;

/// Tensors produced by one training-mode forward pass.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput<'t, T: Scalar> {
    pub loss: Tensor<'t, T>,
    /// Relaxed mask `[B, d]`.
    pub soft: Tensor<'t, T>,
    /// `[B, C]`
    pub log_probs: Tensor<'t, T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean training loss.
    pub loss: f64,
    /// Mean of `Σ z̃` per sample.
    pub mean_soft_mass: f64,
    pub seconds: f64,
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
}

/// `[b, d]` standard normal draw.
pub fn noise_for_batch<T: Scalar, R: Rng + ?Sized>(rng: &mut R, b: usize, d: usize) -> ArrayD<T> {
    ArrayD::from_shape_fn(IxDyn(&[b, d]), |_| T::lit(rng.sample(StandardNormal)))
}

/// Jointly trains ChoiceNet and PredictNet with Adam on minibatches.
///
/// Three independent ChaCha streams derived from `config.seed` drive
/// initialisation, shuffling and copula noise, so a run is bit-reproducible.
/// A trailing batch with fewer than two samples is skipped. `on_epoch` sees
/// the model after every epoch and may abort training by returning an error.
pub fn train<T, F>(config: &TrainingConfig, data: &Dataset, mut on_epoch: F) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    F: FnMut(&EpochLog, &Model<T>) -> Result<()>,
{
    if data.len() < 2 {
        return Err(invalid("dataset", "need at least two samples"));
    }
    let mut model = Model::<T>::new(config, data.dim(), data.n_classes)?;
    let adam_config = AdamConfig {
        decay_mode: config.weight_decay_mode,
        ..AdamConfig::new(config.learning_rate, config.weight_decay)
    };
    let mut adam = Adam::new(adam_config, &model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);

    let x_all = data.x.mapv(T::lit);
    let d = data.dim();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut mass_sum, mut seen) = (0.0, 0.0, 0usize);
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            if rows.len() < 2 {
                continue;
            }
            let diagnose = |e: TensorError| match e {
                TensorError::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch },
                other => Error::Tensor(other),
            };
            let xb = x_all.select(Axis(0), rows).into_dyn();
            let yb: Vec<usize> = rows.iter().map(|&r| data.y[r]).collect();
            let zeta = noise_for_batch::<T, _>(&mut noise_rng, rows.len(), config.noise_dim(d));
            let tape = Tape::new();
            let bound = model.params.bind(&tape, true);
            let out = model
                .forward_loss(&bound, tape.constant(xb), &yb, tape.constant(zeta))
                .map_err(diagnose)?;
            let loss = out.loss.item().to_f64_lossy();
            let mut grads = tape.backward(out.loss).map_err(diagnose)?;
            let grads = bound.gradients(&mut grads);
            if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam.update(&mut model.params, &grads)?;
            loss_sum += loss * rows.len() as f64;
            mass_sum += out.soft.value().sum().to_f64_lossy();
            seen += rows.len();
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            mean_soft_mass: mass_sum / seen.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, &model)?;
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}
