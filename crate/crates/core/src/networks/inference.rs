use ndarray::{s, Array2, ArrayD, Axis, Ix2, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BinaryInference, Model};
use crate::error::Result;
use crate::samplers::{self, MaskMode};
use crate::tensor::{logistic, Tape};
use crate::Scalar;

/// Rows evaluated per tape during inference.
const CHUNK: usize = 1024;

/// Soft and hard masks for a batch of samples, `[n, d]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBatch<T> {
    pub soft: Array2<T>,
    pub hard: Array2<T>,
}

fn to_matrix<T: Scalar>(a: ArrayD<T>) -> Array2<T> {
    a.into_dimensionality::<Ix2>().expect("2-D output")
}

fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(CHUNK).map(move |lo| (lo, (lo + CHUNK).min(n)))
}

/// ChoiceNet scores `α`, `[n, d]`.
pub fn scores<T: Scalar>(model: &Model<T>, x: &Array2<f64>) -> Result<Array2<T>> {
    let mut out = Array2::zeros((x.nrows(), model.d));
    for (lo, hi) in chunks(x.nrows()) {
        let tape = Tape::new();
        let bound = model.params.bind(&tape, false);
        let xb = tape.constant(x.slice(s![lo..hi, ..]).mapv(T::lit).into_dyn());
        let alpha = model.choice.forward(&bound, xb)?.alpha;
        out.slice_mut(s![lo..hi, ..]).assign(&to_matrix(alpha.array()));
    }
    Ok(out)
}

/// Inference masks.
///
/// Binary mode: `soft = logistic(α)` and `hard = round(soft)` (ties to
/// even), or a Bernoulli draw per entry when the config asks for it and an
/// rng is supplied. Top-k mode: the relaxation runs with the noise frozen at
/// `u = 1/2` and `hard` keeps the `k` largest soft entries.
pub fn infer_masks<T: Scalar>(
    model: &Model<T>,
    x: &Array2<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<MaskBatch<T>> {
    let alpha = scores(model, x)?;
    let cfg = &model.config;
    match cfg.mode {
        MaskMode::Binary => {
            let soft = alpha.mapv(logistic);
            let hard = match (cfg.binary_inference, rng) {
                (BinaryInference::Bernoulli, Some(rng)) => {
                    soft.mapv(|p| if rng.random::<f64>() < p.to_f64_lossy() { T::one() } else { T::zero() })
                }
                _ => soft.mapv(Scalar::round_half_even),
            };
            Ok(MaskBatch { soft, hard })
        }
        MaskMode::Topk => {
            let s = &cfg.sampler;
            let mut soft = Array2::zeros(alpha.raw_dim());
            for (lo, hi) in chunks(x.nrows()) {
                let tape = Tape::new();
                let a = tape.constant(alpha.slice(s![lo..hi, ..]).to_owned().into_dyn());
                let u = tape.constant(ArrayD::from_elem(IxDyn(&[hi - lo, model.d]), T::lit(0.5)));
                let relaxed = samplers::topk_relaxed(a, u, T::lit(s.t), T::lit(s.delta), s.k)?;
                soft.slice_mut(s![lo..hi, ..]).assign(&to_matrix(relaxed.array()));
            }
            let mut hard = Array2::zeros(soft.raw_dim());
            for (row, mut out) in soft.axis_iter(Axis(0)).zip(hard.axis_iter_mut(Axis(0))) {
                out.assign(&samplers::trunc(row, s.k)?);
            }
            Ok(MaskBatch { soft, hard })
        }
    }
}

/// PredictNet class probabilities for `x ⊙ mask`, batch norm in inference mode.
pub fn predict_proba<T: Scalar>(model: &Model<T>, x: &Array2<f64>, mask: &Array2<T>) -> Result<Array2<T>> {
    let mut net = model.predict.clone();
    let mut out = Array2::zeros((x.nrows(), model.n_classes));
    for (lo, hi) in chunks(x.nrows()) {
        let tape = Tape::new();
        let bound = model.params.bind(&tape, false);
        let masked = x.slice(s![lo..hi, ..]).mapv(T::lit) * mask.slice(s![lo..hi, ..]);
        let log_probs = net.forward(&bound, tape.constant(masked.into_dyn()), false)?;
        out.slice_mut(s![lo..hi, ..]).assign(&to_matrix(log_probs.array()).mapv(T::exp));
    }
    Ok(out)
}
