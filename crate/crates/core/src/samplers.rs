//! Differentiable mask samplers.
//!
//! * Binary masks: logistic noise `g = log(u / (1 - u))` shifts the scores and
//!   a tempered sigmoid relaxes the threshold `g + α > 0`.
//! * Top-k masks: WRS keys `v = log(u) / α` go through `k` rounds of softmax,
//!   each round damping the mass already claimed by `log(1 - p)`. The sum of
//!   the rounds is the relaxed k-hot vector. `log(1 - p)` is evaluated in
//!   log-space, so a winner with `p` within rounding of 1 is still pushed
//!   below the runner-up.
//!
//! The tensor functions take `[B, d]` inputs; the array functions wrap them
//! for single vectors. Exact enumeration of weighted sampling without
//! replacement is provided as a test oracle.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1, Ix1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{self, Tape, Tensor, TensorError};
use crate::Scalar;

/// Upper bound on `u` inside `log(1 - u)` for the logistic noise.
pub const LOG1M_CAP: f64 = 1.0 - 1e-12;
/// Largest `d` accepted by [`exact_wrs_distribution`].
pub const MAX_ENUMERATION_DIM: usize = 8;

/// Default step-size exponent. Near-tied keys are reordered by the recursion
/// unless `t^δ` is small next to `t/p`; 0.8 keeps ties ordered at `t = 0.01`.
pub const DEFAULT_DELTA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Binary,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub t: f64,
    /// Step-size exponent of the top-k recursion, in `[0, 1)`.
    pub delta: f64,
    pub k: usize,
    pub lambda: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            t: 1.0,
            delta: DEFAULT_DELTA,
            k: 1,
            lambda: 0.0,
        }
    }
}

impl SamplerParams {
    /// Checks the ranges; `k` is only checked when `d` is given.
    pub fn validate(&self, d: Option<usize>) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid("t", format!("temperature must be positive, got {}", self.t)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(invalid("delta", format!("must lie in [0, 1), got {}", self.delta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be non-negative, got {}", self.lambda)));
        }
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if let Some(d) = d {
            if self.k > d {
                return Err(invalid("k", format!("k = {} exceeds d = {d}", self.k)));
            }
        }
        Ok(())
    }
}

/// Relaxed mask together with its discretisation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedMask<T> {
    pub soft: Array1<T>,
    pub hard: Array1<T>,
    pub mode: MaskMode,
}

/// `sigmoid((log(u / (1 - u)) + α) / t)` over `[B, d]`.
pub fn binary_relaxed<'t, T: Scalar>(
    alpha: Tensor<'t, T>,
    u: Tensor<'t, T>,
    t: T,
) -> tensor::Result<Tensor<'t, T>> {
    let g = u.log()?.sub(u.log1m(T::lit(LOG1M_CAP))?)?;
    g.add(alpha)?.scale(t.recip())?.sigmoid()
}

/// Successive-softmax relaxation of the top-k indicator over `[B, d]`.
/// Every `α` entry must be strictly positive.
pub fn topk_relaxed<'t, T: Scalar>(
    alpha: Tensor<'t, T>,
    u: Tensor<'t, T>,
    t: T,
    delta: T,
    k: usize,
) -> tensor::Result<Tensor<'t, T>> {
    if alpha.value().iter().any(|&a| a <= T::zero()) {
        return Err(TensorError::Domain {
            op: "topk_relaxed",
            detail: "scores must be strictly positive".into(),
        });
    }
    let d = alpha.shape().last().copied().unwrap_or(0);
    if k == 0 || k > d {
        return Err(TensorError::Domain {
            op: "topk_relaxed",
            detail: format!("k = {k} must lie in 1..={d}"),
        });
    }
    let step = t.powf(delta);
    let mut v = u.log()?.div(alpha)?;
    let mut soft = v.softmax(t)?;
    for _ in 1..k {
        v = v.add(v.log1m_softmax(t)?.scale(step)?)?;
        soft = soft.add(v.softmax(t)?)?;
    }
    Ok(soft)
}

fn row<'t, T: Scalar>(tape: &'t Tape<T>, a: ArrayView1<'_, T>) -> tensor::Result<Tensor<'t, T>> {
    tape.constant(a.to_owned().into_dyn()).reshape(&[1, a.len()])
}

fn flatten<T: Scalar>(t: Tensor<'_, T>) -> Array1<T> {
    let v = t.array();
    let n = v.len();
    v.into_shape_with_order(n).expect("contiguous").into_dimensionality::<Ix1>().expect("1-D")
}

fn check_lengths(alpha: usize, u: usize) -> Result<()> {
    if alpha != u {
        return Err(Error::LengthMismatch {
            what: "noise",
            expected: alpha,
            got: u,
        });
    }
    Ok(())
}

/// Binary mask for one sample; `hard` is `round(soft)` with ties to even.
pub fn binary_mask<T: Scalar>(
    alpha: ArrayView1<'_, T>,
    u: ArrayView1<'_, T>,
    params: &SamplerParams,
) -> Result<RelaxedMask<T>> {
    params.validate(None)?;
    check_lengths(alpha.len(), u.len())?;
    let tape = Tape::new();
    let soft = flatten(binary_relaxed(row(&tape, alpha)?, row(&tape, u)?, T::lit(params.t))?);
    let hard = soft.mapv(Scalar::round_half_even);
    Ok(RelaxedMask {
        soft,
        hard,
        mode: MaskMode::Binary,
    })
}

/// `P(z = 1) = exp(α) / (1 + exp(α))`.
pub fn marginal_inclusion_probability<T: Scalar>(alpha: T) -> T {
    crate::tensor::logistic(alpha)
}

/// Top-k mask for one sample.
pub fn topk_mask<T: Scalar>(
    alpha: ArrayView1<'_, T>,
    u: ArrayView1<'_, T>,
    params: &SamplerParams,
) -> Result<RelaxedMask<T>> {
    params.validate(Some(alpha.len()))?;
    check_lengths(alpha.len(), u.len())?;
    let tape = Tape::new();
    let soft = topk_relaxed(
        row(&tape, alpha)?,
        row(&tape, u)?,
        T::lit(params.t),
        T::lit(params.delta),
        params.k,
    )?;
    let soft = flatten(soft);
    let hard = trunc(soft.view(), params.k)?;
    Ok(RelaxedMask {
        soft,
        hard,
        mode: MaskMode::Topk,
    })
}

/// Indices of the `k` largest entries in decreasing order; ties go to the
/// lower index.
pub fn top_indices<T: Scalar>(x: ArrayView1<'_, T>, k: usize) -> Result<Vec<usize>> {
    if k > x.len() {
        return Err(invalid("k", format!("k = {k} exceeds d = {}", x.len())));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(k);
    Ok(order)
}

/// k-hot mask over the `k` largest entries.
pub fn trunc<T: Scalar>(x: ArrayView1<'_, T>, k: usize) -> Result<Array1<T>> {
    let mut hard = Array1::zeros(x.len());
    for i in top_indices(x, k)? {
        hard[i] = T::one();
    }
    Ok(hard)
}

/// Probability of every ordered k-tuple under weighted sampling without
/// replacement: `α_{i1}/S · α_{i2}/(S - α_{i1}) · …`.
pub fn exact_wrs_distribution(alpha: &[f64], k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let d = alpha.len();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::OracleTooLarge {
            d,
            max: MAX_ENUMERATION_DIM,
        });
    }
    if k == 0 || k > d {
        return Err(invalid("k", format!("k = {k} must lie in 1..={d}")));
    }
    if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(invalid("alpha", "weights must be positive and finite"));
    }
    let total: f64 = alpha.iter().sum();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(k);
    let mut used = vec![false; d];
    enumerate(alpha, k, total, 1.0, &mut prefix, &mut used, &mut out);
    Ok(out)
}

fn enumerate(
    alpha: &[f64],
    k: usize,
    remaining: f64,
    prob: f64,
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<(Vec<usize>, f64)>,
) {
    if prefix.len() == k {
        out.push((prefix.clone(), prob));
        return;
    }
    for i in 0..alpha.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        prefix.push(i);
        enumerate(alpha, k, remaining - alpha[i], prob * alpha[i] / remaining, prefix, used, out);
        prefix.pop();
        used[i] = false;
    }
}

/// Collapses ordered tuples to sorted index sets.
pub fn unordered(dist: &[(Vec<usize>, f64)]) -> BTreeMap<Vec<usize>, f64> {
    let mut sets = BTreeMap::new();
    for (tuple, p) in dist {
        let mut key = tuple.clone();
        key.sort_unstable();
        *sets.entry(key).or_insert(0.0) += p;
    }
    sets
}

/// Classical two-step WRS: keys `log(u_i) / α_i` with independent uniforms,
/// then the `k` largest keys in decreasing order.
pub fn wrs_reference_sampler<R: Rng + ?Sized>(alpha: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(invalid("alpha", "weights must be positive"));
    }
    let keys: Array1<f64> = alpha
        .iter()
        .map(|&a| {
            let u: f64 = rng.random();
            u.max(f64::MIN_POSITIVE).ln() / a
        })
        .collect();
    top_indices(keys.view(), k)
}
