use std::rc::Rc;

use ndarray::{Array2, Array3, ArrayView2, Axis, IxDyn};

use super::{Result, Tensor, TensorError};
use crate::Scalar;

/// Lower Cholesky factor of the symmetric part of `a`.
///
/// Fails with [`TensorError::NotPositiveDefinite`] carrying the index of the
/// first pivot that is not strictly positive.
pub fn cholesky_lower<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(TensorError::ShapeMismatch {
            op: "cholesky",
            lhs: a.shape().to_vec(),
            rhs: a.shape().to_vec(),
        });
    }
    let half = T::lit(0.5);
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let row_j = &l[j * n..j * n + j];
        let diag = a[[j, j]] - dot(row_j, row_j);
        if !(diag > T::zero()) {
            return Err(TensorError::NotPositiveDefinite {
                pivot: j,
                value: diag.to_f64_lossy(),
            });
        }
        let djj = diag.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let s = half * (a[[i, j]] + a[[j, i]]) - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = s / djj;
        }
    }
    Ok(Array2::from_shape_vec((n, n), l).expect("n*n entries"))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Solves `Lᵀ X = B` for `X` in place, with `L` lower triangular and `b`
/// in standard (row-major) layout.
pub fn solve_lower_transposed<T: Scalar>(l: ArrayView2<'_, T>, b: &mut Array2<T>) {
    let n = l.nrows();
    let m = b.ncols();
    let flat = b.as_slice_mut().expect("standard layout");
    for i in (0..n).rev() {
        let (head, tail) = flat.split_at_mut((i + 1) * m);
        let bi = &mut head[i * m..];
        for j in i + 1..n {
            let lji = l[[j, i]];
            if lji != T::zero() {
                let bj = &tail[(j - i - 1) * m..(j - i) * m];
                for (x, &y) in bi.iter_mut().zip(bj) {
                    *x -= lji * y;
                }
            }
        }
        let inv = l[[i, i]].recip();
        for x in bi.iter_mut() {
            *x *= inv;
        }
    }
}

/// Gradient of `chol(sym(A))` with respect to `A`:
/// `L⁻ᵀ S L⁻¹` where `S` is the symmetrised lower part of `Lᵀ L̄` with halved diagonal.
fn cholesky_grad<T: Scalar>(l: ArrayView2<'_, T>, lbar: ArrayView2<'_, T>) -> Array2<T> {
    let n = l.nrows();
    let m = l.t().dot(&lbar);
    let half = T::lit(0.5);
    let mut s = Array2::<T>::zeros((n, n));
    for i in 0..n {
        s[[i, i]] = half * m[[i, i]];
        for j in 0..i {
            let v = half * m[[i, j]];
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    // Y = L⁻ᵀ S, then G = Y L⁻¹ = (L⁻ᵀ Yᵀ)ᵀ
    solve_lower_transposed(l, &mut s);
    let mut yt = s.t().as_standard_layout().into_owned();
    solve_lower_transposed(l, &mut yt);
    let g = yt.t().to_owned();
    // symmetric in exact arithmetic; average away rounding asymmetry
    let gt = g.t().to_owned();
    (g + gt).mapv(|v| v * half)
}

impl<'t, T: Scalar> Tensor<'t, T> {
    /// Lower Cholesky factor of each trailing `d x d` matrix.
    ///
    /// The input is symmetrised as `(A + Aᵀ)/2` before factorization.
    pub fn cholesky(self) -> Result<Self> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 || x.shape()[nd - 1] != x.shape()[nd - 2] {
            return Err(TensorError::Domain {
                op: "cholesky",
                detail: format!("needs square trailing axes, got {:?}", x.shape()),
            });
        }
        let d = x.shape()[nd - 1];
        let lead: usize = x.shape()[..nd - 2].iter().product();
        let x3 = x
            .view()
            .into_shape_with_order((lead, d, d))
            .expect("standard layout");
        let mut out = Array3::<T>::zeros((lead, d, d));
        for b in 0..lead {
            let l = cholesky_lower(x3.index_axis(Axis(0), b))?;
            out.index_axis_mut(Axis(0), b).assign(&l);
        }
        let shape = x.shape().to_vec();
        let y = Rc::new(out.into_shape_with_order(IxDyn(&shape)).expect("shape"));
        let yc = Rc::clone(&y);
        self.tape.push("cholesky", y, &[self], move |g, _| {
            let l3 = yc.view().into_shape_with_order((lead, d, d)).expect("shape");
            let g3 = g.view().into_shape_with_order((lead, d, d)).expect("shape");
            let mut gx = Array3::<T>::zeros((lead, d, d));
            for b in 0..lead {
                let gb = cholesky_grad(l3.index_axis(Axis(0), b), g3.index_axis(Axis(0), b));
                gx.index_axis_mut(Axis(0), b).assign(&gb);
            }
            vec![Some(gx.into_shape_with_order(IxDyn(&shape)).expect("shape"))]
        })
    }
}
