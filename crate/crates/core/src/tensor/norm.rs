use std::rc::Rc;

use ndarray::{Array1, ArrayD, Axis, Ix2, Zip};

use super::{Result, Tensor, TensorError};
use crate::Scalar;

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }
}

impl<'t, T: Scalar> Tensor<'t, T> {
    /// Per-column `(x - mean) / sqrt(max(var, eps))` over a `[batch, features]`
    /// input, using the biased batch variance. Columns whose variance sits
    /// below the floor are only centred and scaled by the constant `eps^-1/2`.
    pub fn standardize(self, eps: T) -> Result<Self> {
        let x = self.value();
        let x2 = x
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|_| TensorError::Domain {
                op: "standardize",
                detail: format!("expects [batch, features], got {:?}", x.shape()),
            })?;
        let n = x2.nrows();
        if n < 2 {
            return Err(TensorError::Domain {
                op: "standardize",
                detail: "batch statistics need at least 2 rows".into(),
            });
        }
        let nf = T::lit(n as f64);
        let mean = x2.sum_axis(Axis(0)) / nf;
        let centered = &x2 - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / nf;
        let floored = var.mapv(|v| v < eps);
        let inv_std = var.mapv(|v| v.max(eps).sqrt().recip());
        let xhat = Rc::new((&centered * &inv_std).into_dyn());
        let xh = Rc::clone(&xhat);
        self.tape.push("standardize", xhat, &[self], move |g, _| {
            let g2 = g.view().into_dimensionality::<Ix2>().expect("standardize grad");
            let xh2 = xh.view().into_dimensionality::<Ix2>().expect("standardize out");
            let sum_g = g2.sum_axis(Axis(0));
            let sum_gx = (&g2 * &xh2).sum_axis(Axis(0));
            // a floored column has a constant scale, so its variance term drops out
            let sum_gx = Zip::from(&sum_gx)
                .and(&floored)
                .map_collect(|&s, &f| if f { T::zero() } else { s });
            let gx = (&g2 * nf - &sum_g - &(&xh2 * &sum_gx)) * &inv_std / nf;
            vec![Some(gx.into_dyn())]
        })
    }

    /// Batch normalisation with learned `scale` and `shift` (both `[features]`).
    ///
    /// Training mode normalises with batch statistics and updates the
    /// running estimates; inference mode uses the frozen running estimates.
    pub fn batch_norm(
        self,
        state: &mut BatchNormState<T>,
        scale: Self,
        shift: Self,
        training: bool,
    ) -> Result<Self> {
        let normalized = if training {
            let out = self.standardize(state.eps)?;
            let x = self.value();
            let x2 = x.view().into_dimensionality::<Ix2>().expect("checked");
            let mean = x2.mean_axis(Axis(0)).expect("non-empty batch");
            let unbiased = x2
                .var_axis(Axis(0), T::one())
                .mapv(|v| v.max(T::zero()));
            let m = state.momentum;
            state.running_mean = &state.running_mean * (T::one() - m) + &(mean * m);
            state.running_var = &state.running_var * (T::one() - m) + &(unbiased * m);
            out
        } else {
            let tape = self.tape;
            let mean: ArrayD<T> = state.running_mean.clone().into_dyn();
            let inv_std: ArrayD<T> = state
                .running_var
                .mapv(|v| v.max(state.eps).sqrt().recip())
                .into_dyn();
            self.sub(tape.constant(mean))?.mul(tape.constant(inv_std))?
        };
        normalized.mul(scale)?.add(shift)
    }
}
