use ndarray::{Array2, ArrayD};

use crate::tensor::{self, Tensor, TensorError};
use crate::Scalar;

/// Mean negative log-likelihood of `labels` under `log_probs: [B, C]`.
pub fn cross_entropy<'t, T: Scalar>(log_probs: Tensor<'t, T>, labels: &[usize]) -> tensor::Result<Tensor<'t, T>> {
    let shape = log_probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let (b, c) = (shape[0], shape[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(TensorError::Domain {
            op: "cross_entropy",
            detail: format!("label {bad} outside 0..{c}"),
        });
    }
    let mut pick = Array2::<T>::zeros((b, c));
    for (r, &y) in labels.iter().enumerate() {
        pick[[r, y]] = T::one();
    }
    let pick: ArrayD<T> = pick.into_dyn();
    log_probs
        .mul(log_probs.tape().constant(pick))?
        .sum()?
        .scale(T::lit(-1.0 / b as f64))
}

/// Cross-entropy plus `λ` times the mean per-sample L1 norm of the relaxed mask.
pub fn loss_binary<'t, T: Scalar>(
    log_probs: Tensor<'t, T>,
    labels: &[usize],
    soft: Tensor<'t, T>,
    lambda: T,
) -> tensor::Result<Tensor<'t, T>> {
    let b = soft.shape()[0];
    let l1 = soft.abs()?.sum()?.scale(lambda / T::lit(b as f64))?;
    cross_entropy(log_probs, labels)?.add(l1)
}

/// Cross-entropy only; the cardinality is fixed by the sampler.
pub fn loss_topk<'t, T: Scalar>(log_probs: Tensor<'t, T>, labels: &[usize]) -> tensor::Result<Tensor<'t, T>> {
    cross_entropy(log_probs, labels)
}
