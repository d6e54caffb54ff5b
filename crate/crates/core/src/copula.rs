//! Correlated uniform noise through a Gaussian copula.
//!
//! The covariance comes from a factor model, either `L Lᵀ + σ² I`
//! (binary-mask mode) or `I + τ L Lᵀ` (top-k mode), with `L` of shape
//! `d x p`. It is rescaled to a correlation matrix `R`, factorised as
//! `R = V Vᵀ`, and standard normal noise `ζ` is pushed through `q = V ζ`
//! and `u = Φ(q)`. Because `R` has a unit diagonal every `qᵢ` is standard
//! normal and every `uᵢ` is exactly uniform on (0, 1).
//!
//! The tensor-level functions accept a leading batch axis
//! (`factor: [B, d, p]`) so that every sample can carry its own model.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, Axis, Ix2, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::{self, normal_cdf, Tape, Tensor, TensorError};
use crate::Scalar;

/// Added to `R` before factorisation.
pub const JITTER: f64 = 1e-8;
/// Uniform draws are kept inside `[UNIFORM_CLAMP, 1 - UNIFORM_CLAMP]`.
pub const UNIFORM_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    Low,
    Full,
}

/// How the factor matrix enters the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceForm {
    /// `L Lᵀ + σ² I`
    NoiseLevel,
    /// `I + τ L Lᵀ`
    Scaled,
}

/// How the latent Gaussian with correlation `R` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseConstruction {
    /// `q = V ζ` with `V = chol(R)`; `ζ` has `d` entries.
    #[default]
    Cholesky,
    /// `q = D^{-1/2} (L ε + s η)` with `Σ = L Lᵀ + s² I` and `D = diag Σ`;
    /// `ζ = (ε, η)` has `p + d` entries. Same law as the Cholesky route,
    /// in `O(d p)` per sample instead of `O(d³)`.
    Factor,
}

impl NoiseConstruction {
    /// Length of the standard normal vector `ζ` per sample.
    pub fn noise_dim(self, d: usize, p: usize) -> usize {
        match self {
            NoiseConstruction::Cholesky => d,
            NoiseConstruction::Factor => p + d,
        }
    }
}

/// A single correlation model with concrete parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel<T> {
    /// `d x p` loading matrix.
    pub factor: Array2<T>,
    pub sigma: T,
    pub tau: T,
    pub form: CovarianceForm,
}

/// One draw of copula noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<T> {
    pub zeta: Array1<T>,
    pub q: Array1<T>,
    pub u: Array1<T>,
}

impl<T: Scalar> CorrelationModel<T> {
    pub fn noise_level(factor: Array2<T>, sigma: T) -> Self {
        Self {
            factor,
            sigma,
            tau: T::zero(),
            form: CovarianceForm::NoiseLevel,
        }
    }

    pub fn scaled(factor: Array2<T>, tau: T) -> Self {
        Self {
            factor,
            sigma: T::one(),
            tau,
            form: CovarianceForm::Scaled,
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn rank_mode(&self) -> RankMode {
        if self.factor.ncols() >= self.factor.nrows() {
            RankMode::Full
        } else {
            RankMode::Low
        }
    }

    fn on_tape<'t>(&self, tape: &'t Tape<T>) -> tensor::Result<Tensor<'t, T>> {
        let (d, p) = self.factor.dim();
        let factor = tape.constant(self.factor.clone().into_dyn()).reshape(&[1, d, p])?;
        match self.form {
            CovarianceForm::NoiseLevel => {
                covariance_noise_level(factor, tape.constant(ArrayD::from_elem(IxDyn(&[1]), self.sigma)))
            }
            CovarianceForm::Scaled => covariance_scaled(factor, self.tau),
        }
    }

    pub fn covariance(&self) -> tensor::Result<Array2<T>> {
        let tape = Tape::new();
        Ok(squeeze_matrix(self.on_tape(&tape)?.array()))
    }

    pub fn correlation(&self) -> tensor::Result<Array2<T>> {
        let tape = Tape::new();
        Ok(squeeze_matrix(normalize(self.on_tape(&tape)?)?.array()))
    }

    /// Lower Cholesky factor of `R + jitter·I`.
    pub fn correlation_factor(&self) -> tensor::Result<Array2<T>> {
        let mut r = self.correlation()?;
        add_jitter(&mut r);
        tensor::cholesky_lower(r.view())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> tensor::Result<NoiseDraw<T>> {
        let v = self.correlation_factor()?;
        let zeta = standard_normal(self.dim(), rng);
        let q = v.dot(&zeta);
        let u = q.mapv(uniform_from_latent);
        Ok(NoiseDraw { zeta, q, u })
    }

    /// `n` independent draws as rows; returns `(q, u)`.
    pub fn sample_many<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> tensor::Result<(Array2<T>, Array2<T>)> {
        let v = self.correlation_factor()?;
        let d = self.dim();
        let zeta = Array2::from_shape_fn((n, d), |_| T::lit(rng.sample(StandardNormal)));
        let q = zeta.dot(&v.t());
        let u = q.mapv(uniform_from_latent);
        Ok((q, u))
    }
}

fn squeeze_matrix<T: Scalar>(a: ArrayD<T>) -> Array2<T> {
    let d = a.shape()[a.ndim() - 1];
    a.into_shape_with_order((d, d)).expect("single matrix").into_dimensionality::<Ix2>().expect("2-D")
}

fn add_jitter<T: Scalar>(r: &mut Array2<T>) {
    for i in 0..r.nrows() {
        r[[i, i]] += T::lit(JITTER);
    }
}

fn uniform_from_latent<T: Scalar>(q: T) -> T {
    let eps = T::lit(UNIFORM_CLAMP);
    normal_cdf(q).max(eps).min(T::one() - eps)
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<T> {
    Array1::from_shape_fn(d, |_| T::lit(rng.sample(StandardNormal)))
}

fn identity<'t, T: Scalar>(tape: &'t Tape<T>, d: usize) -> Tensor<'t, T> {
    tape.constant(Array2::<T>::eye(d).into_dyn())
}

fn gram<'t, T: Scalar>(factor: Tensor<'t, T>) -> tensor::Result<Tensor<'t, T>> {
    factor.bmm(factor.transpose()?)
}

/// `L Lᵀ + σ² I` for `factor: [B, d, p]`, `sigma: [B]`.
pub fn covariance_noise_level<'t, T: Scalar>(
    factor: Tensor<'t, T>,
    sigma: Tensor<'t, T>,
) -> tensor::Result<Tensor<'t, T>> {
    let shape = factor.shape();
    let (b, d) = (shape[0], shape[1]);
    let eye = identity(factor.tape(), d);
    let noise = sigma.square()?.reshape(&[b, 1, 1])?.mul(eye)?;
    gram(factor)?.add(noise)
}

/// `I + τ L Lᵀ` for `factor: [B, d, p]`.
pub fn covariance_scaled<'t, T: Scalar>(factor: Tensor<'t, T>, tau: T) -> tensor::Result<Tensor<'t, T>> {
    let d = factor.shape()[1];
    let eye = identity(factor.tape(), d);
    gram(factor)?.scale(tau)?.add(eye)
}

/// Rescales a covariance to a correlation matrix:
/// `R_ij = Σ_ij / sqrt(Σ_ii Σ_jj)`. Works on `[d, d]` or `[B, d, d]`.
pub fn normalize<'t, T: Scalar>(sigma: Tensor<'t, T>) -> tensor::Result<Tensor<'t, T>> {
    let diag = sigma.diagonal()?;
    if diag.value().iter().any(|&v| v <= T::zero()) {
        return Err(TensorError::Domain {
            op: "normalize",
            detail: "covariance diagonal must be strictly positive".into(),
        });
    }
    let shape = diag.shape();
    let d = shape[shape.len() - 1];
    let lead = &shape[..shape.len() - 1];
    let inv = diag.tape().scalar(T::one()).div(diag.sqrt()?)?;
    let col: Vec<usize> = lead.iter().copied().chain([d, 1]).collect();
    let row: Vec<usize> = lead.iter().copied().chain([1, d]).collect();
    sigma.mul(inv.reshape(&col)?)?.mul(inv.reshape(&row)?)
}

/// Latent Gaussian `q = V ζ` with `V = chol(R + jitter·I)`, batched over
/// `corr: [B, d, d]`, `zeta: [B, d]`. Returns `(q, u)` with `u = Φ(q)`
/// clamped away from 0 and 1.
pub fn correlated_uniform<'t, T: Scalar>(
    corr: Tensor<'t, T>,
    zeta: Tensor<'t, T>,
) -> tensor::Result<(Tensor<'t, T>, Tensor<'t, T>)> {
    let shape = zeta.shape();
    let (b, d) = (shape[0], shape[1]);
    let tape = corr.tape();
    let jitter = identity(tape, d).scale(T::lit(JITTER))?;
    let v = corr.add(jitter)?.cholesky()?;
    let q = v.bmm(zeta.reshape(&[b, d, 1])?)?.reshape(&[b, d])?;
    let u = uniform(q)?;
    Ok((q, u))
}

/// Like [`correlated_uniform`], but one correlation matrix (`[d, d]` or
/// `[1, d, d]`) drives every row of `zeta: [B, d]`.
pub fn correlated_uniform_shared<'t, T: Scalar>(
    corr: Tensor<'t, T>,
    zeta: Tensor<'t, T>,
) -> tensor::Result<(Tensor<'t, T>, Tensor<'t, T>)> {
    let d = zeta.shape()[1];
    let tape = corr.tape();
    let jitter = identity(tape, d).scale(T::lit(JITTER))?;
    let v = corr.reshape(&[d, d])?.add(jitter)?.cholesky()?;
    let q = zeta.matmul(v.transpose()?)?;
    let u = uniform(q)?;
    Ok((q, u))
}

/// Latent Gaussian through the factor construction. `factor` is
/// `[B, d, p]`, or `[1, d, p]` shared by every row; `sigma` (same leading
/// size) selects `L Lᵀ + σ² I`, otherwise `I + τ L Lᵀ` is used.
/// `zeta: [B, p + d]` is treated as a constant. Returns `(q, u)`.
pub fn factor_uniform<'t, T: Scalar>(
    factor: Tensor<'t, T>,
    sigma: Option<Tensor<'t, T>>,
    tau: T,
    zeta: Tensor<'t, T>,
) -> tensor::Result<(Tensor<'t, T>, Tensor<'t, T>)> {
    let fs = factor.shape();
    let (bf, d, p) = (fs[0], fs[1], fs[2]);
    let b = zeta.shape()[0];
    if zeta.shape()[1] != p + d || (bf != 1 && bf != b) {
        return Err(TensorError::ShapeMismatch {
            op: "factor_uniform",
            lhs: fs,
            rhs: zeta.shape(),
        });
    }
    let tape = factor.tape();
    let z = zeta.value();
    let eps = tape.constant(z.slice(ndarray::s![.., ..p]).to_owned().into_dyn());
    let eta = tape.constant(z.slice(ndarray::s![.., p..]).to_owned().into_dyn());
    let (l, s) = match sigma {
        Some(s) => (factor, s.reshape(&[bf, 1])?),
        None => (
            factor.scale(tau.sqrt())?,
            tape.constant(ArrayD::from_elem(IxDyn(&[bf, 1]), T::one())),
        ),
    };
    let lat = if bf == b {
        l.bmm(eps.reshape(&[b, p, 1])?)?.reshape(&[b, d])?
    } else {
        eps.matmul(l.reshape(&[d, p])?.transpose()?)?
    };
    let var = l.square()?.sum_axis(2)?.add(s.square()?)?;
    let q = lat.add(eta.mul(s)?)?.div(var.sqrt()?)?;
    Ok((q, uniform(q)?))
}

/// `Φ(q)` clamped into `[1e-12, 1 - 1e-12]`.
pub fn uniform<'t, T: Scalar>(q: Tensor<'t, T>) -> tensor::Result<Tensor<'t, T>> {
    let eps = T::lit(UNIFORM_CLAMP);
    q.normal_cdf()?.clamp(eps, T::one() - eps)
}

/// Writes a square matrix as CSV with a header row of 1-based feature indices.
pub fn write_matrix_csv<T: Scalar>(path: &Path, matrix: &Array2<T>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (1..=matrix.ncols()).map(|i| i.to_string()).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in matrix.axis_iter(Axis(0)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{}", v.to_f64_lossy())).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}
