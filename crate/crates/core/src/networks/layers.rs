use std::ops::Index;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::tensor::{self, Gradients, Tape, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    names: Vec<String>,
    values: Vec<ArrayD<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[ArrayD<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(ArrayD::len).sum()
    }

    /// Records every parameter on `tape`, as gradient leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let tensors = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { tensors }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t, T: Scalar> {
    tensors: Vec<Tensor<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Gradient for every parameter, zeros where unreachable.
    pub fn gradients(&self, grads: &mut Gradients<T>) -> Vec<ArrayD<T>> {
        self.tensors.iter().map(|&t| grads.take(t)).collect()
    }

    pub fn tensors(&self) -> &[Tensor<'t, T>] {
        &self.tensors
    }
}

impl<'t, T: Scalar> Index<ParamId> for Bound<'t, T> {
    type Output = Tensor<'t, T>;

    fn index(&self, id: ParamId) -> &Self::Output {
        &self.tensors[id.0]
    }
}

/// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| T::lit(rng.random_range(-bound..=bound)))
}

/// Affine layer `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = params.push(format!("{name}.weight"), uniform_init(&[inputs, outputs], inputs, rng));
        let bias = bias.then(|| params.push(format!("{name}.bias"), uniform_init(&[outputs], inputs, rng)));
        Self { weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, bound: &Bound<'t, T>, x: Tensor<'t, T>) -> tensor::Result<Tensor<'t, T>> {
        let y = x.matmul(bound[self.weight])?;
        match self.bias {
            Some(b) => y.add(bound[b]),
            None => Ok(y),
        }
    }
}
