use std::rc::Rc;

use ndarray::{linalg::general_mat_mul, ArrayD, Axis, Ix2, Ix3, IxDyn, Zip};

use super::{Result, Tensor, TensorError};
use crate::Scalar;

const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn unbroadcast<T: Scalar>(mut g: ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &len) in shape.iter().enumerate() {
        if len == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g
}

fn zip_broadcast<T: Scalar>(
    op: &'static str,
    a: &ArrayD<T>,
    b: &ArrayD<T>,
    f: impl Fn(T, T) -> T,
) -> Result<ArrayD<T>> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let av = a.broadcast(IxDyn(&shape)).expect("checked broadcast");
    let bv = b.broadcast(IxDyn(&shape)).expect("checked broadcast");
    Ok(Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y)))
}

impl<'t, T: Scalar> Tensor<'t, T> {
    pub(crate) fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Self> {
        let x = self.value();
        let y = Rc::new(x.mapv(f));
        let yc = Rc::clone(&y);
        self.tape.push(op, y, &[self], move |g, _| {
            let mut gx = g.clone();
            Zip::from(&mut gx)
                .and(&*x)
                .and(&*yc)
                .for_each(|g, &x, &y| *g = *g * df(x, y));
            vec![Some(gx)]
        })
    }

    pub fn add(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = zip_broadcast("add", &a, &b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push("add", Rc::new(y), &[self, other], move |g, need| {
            vec![
                need[0].then(|| unbroadcast(g.clone(), &sa)),
                need[1].then(|| unbroadcast(g.clone(), &sb)),
            ]
        })
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = zip_broadcast("sub", &a, &b, |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push("sub", Rc::new(y), &[self, other], move |g, need| {
            vec![
                need[0].then(|| unbroadcast(g.clone(), &sa)),
                need[1].then(|| unbroadcast(g.mapv(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = zip_broadcast("mul", &a, &b, |x, y| x * y)?;
        self.tape.push("mul", Rc::new(y), &[self, other], move |g, need| {
            vec![
                need[0].then(|| unbroadcast(g * &*b, a.shape())),
                need[1].then(|| unbroadcast(g * &*a, b.shape())),
            ]
        })
    }

    pub fn div(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        if b.iter().any(|v| v.is_zero()) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let y = zip_broadcast("div", &a, &b, |x, y| x / y)?;
        self.tape.push("div", Rc::new(y), &[self, other], move |g, need| {
            let ga = need[0].then(|| unbroadcast(g / &*b, a.shape()));
            let gb = need[1].then(|| {
                let q = zip_broadcast("div", &a, &b, |x, y| -x / (y * y)).expect("checked");
                unbroadcast(g * &q, b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn neg(self) -> Result<Self> {
        self.scale(-T::one())
    }

    pub fn scale(self, c: T) -> Result<Self> {
        self.unary("scale", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Result<Self> {
        self.unary("add_scalar", |x| x + c, |_, _| T::one())
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary("sigmoid", logistic, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary("tanh", T::tanh, |_, y| T::one() - y * y)
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn selu(self) -> Result<Self> {
        let (alpha, scale) = (T::lit(SELU_ALPHA), T::lit(SELU_SCALE));
        self.unary(
            "selu",
            move |x| {
                if x > T::zero() {
                    scale * x
                } else {
                    scale * alpha * x.exp_m1()
                }
            },
            move |x, y| if x > T::zero() { scale } else { y + scale * alpha },
        )
    }

    pub fn softplus(self) -> Result<Self> {
        self.unary(
            "softplus",
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| logistic(x),
        )
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", T::exp, |_, y| y)
    }

    pub fn log(self) -> Result<Self> {
        if self.value().iter().any(|&v| v <= T::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: "input must be strictly positive".into(),
            });
        }
        self.unary("log", T::ln, |x, _| x.recip())
    }

    pub fn sqrt(self) -> Result<Self> {
        if self.value().iter().any(|&v| v <= T::zero()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: "input must be strictly positive".into(),
            });
        }
        self.unary("sqrt", T::sqrt, |_, y| T::lit(0.5) / y)
    }

    pub fn abs(self) -> Result<Self> {
        self.unary("abs", T::abs, |x, _| {
            if x >= T::zero() {
                T::one()
            } else {
                -T::one()
            }
        })
    }

    pub fn square(self) -> Result<Self> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// `ln(1 - min(x, cap))`; the gradient is zero where the cap is active.
    pub fn log1m(self, cap: T) -> Result<Self> {
        self.unary(
            "log1m",
            move |x| (-x.min(cap)).ln_1p(),
            move |x, _| {
                if x < cap {
                    -(T::one() - x).recip()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(self, lo: T, hi: T) -> Result<Self> {
        self.unary(
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Rounds half to even. Forward only: no gradient flows back.
    pub fn round(self) -> Result<Self> {
        let y = self.value().mapv(T::round_half_even);
        self.tape.push("round", Rc::new(y), &[self], |_, _| vec![None])
    }

    /// Same value, cut off from the tape.
    pub fn detach(self) -> Self {
        self.tape.constant((*self.value()).clone())
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let a2 = a.view().into_dimensionality::<Ix2>().map_err(|_| mismatch())?;
        let b2 = b.view().into_dimensionality::<Ix2>().map_err(|_| mismatch())?;
        if a2.ncols() != b2.nrows() {
            return Err(mismatch());
        }
        let y = a2.dot(&b2).into_dyn();
        self.tape.push("matmul", Rc::new(y), &[self, other], move |g, need| {
            let g2 = g.view().into_dimensionality::<Ix2>().expect("matmul grad");
            let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs");
            let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs");
            vec![
                need[0].then(|| g2.dot(&b2.t()).into_dyn()),
                need[1].then(|| a2.t().dot(&g2).into_dyn()),
            ]
        })
    }

    /// Batched matrix product `[B, m, n] x [B, n, p] -> [B, m, p]`.
    pub fn bmm(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let mismatch = || TensorError::ShapeMismatch {
            op: "bmm",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let a3 = a.view().into_dimensionality::<Ix3>().map_err(|_| mismatch())?;
        let b3 = b.view().into_dimensionality::<Ix3>().map_err(|_| mismatch())?;
        let (batch, m, n) = a3.dim();
        let (bb, nb, p) = b3.dim();
        if batch != bb || n != nb {
            return Err(mismatch());
        }
        let mut y = ndarray::Array3::<T>::zeros((batch, m, p));
        for i in 0..batch {
            general_mat_mul(
                T::one(),
                &a3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i),
                T::zero(),
                &mut y.index_axis_mut(Axis(0), i),
            );
        }
        self.tape
            .push("bmm", Rc::new(y.into_dyn()), &[self, other], move |g, need| {
                let g3 = g.view().into_dimensionality::<Ix3>().expect("bmm grad");
                let a3 = a.view().into_dimensionality::<Ix3>().expect("bmm lhs");
                let b3 = b.view().into_dimensionality::<Ix3>().expect("bmm rhs");
                let ga = need[0].then(|| {
                    let mut ga = ndarray::Array3::<T>::zeros(a3.raw_dim());
                    for i in 0..batch {
                        general_mat_mul(
                            T::one(),
                            &g3.index_axis(Axis(0), i),
                            &b3.index_axis(Axis(0), i).t(),
                            T::zero(),
                            &mut ga.index_axis_mut(Axis(0), i),
                        );
                    }
                    ga.into_dyn()
                });
                let gb = need[1].then(|| {
                    let mut gb = ndarray::Array3::<T>::zeros(b3.raw_dim());
                    for i in 0..batch {
                        general_mat_mul(
                            T::one(),
                            &a3.index_axis(Axis(0), i).t(),
                            &g3.index_axis(Axis(0), i),
                            T::zero(),
                            &mut gb.index_axis_mut(Axis(0), i),
                        );
                    }
                    gb.into_dyn()
                });
                vec![ga, gb]
            })
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Self> {
        let x = self.value();
        if x.ndim() < 2 {
            return Err(TensorError::Domain {
                op: "transpose",
                detail: format!("needs at least 2 axes, got {:?}", x.shape()),
            });
        }
        let swap = |a: &ArrayD<T>| {
            let mut v = a.view();
            let n = v.ndim();
            v.swap_axes(n - 2, n - 1);
            v.as_standard_layout().into_owned()
        };
        let y = swap(&x);
        self.tape
            .push("transpose", Rc::new(y), &[self], move |g, _| vec![Some(swap(g))])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let x = self.value();
        let new_len: usize = shape.iter().product();
        if new_len != x.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let y = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("length checked");
        let orig = x.shape().to_vec();
        self.tape.push("reshape", Rc::new(y), &[self], move |g, _| {
            let g = g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&orig))
                .expect("reshape grad");
            vec![Some(g)]
        })
    }

    pub fn sum(self) -> Result<Self> {
        let x = self.value();
        let y = ArrayD::from_elem(IxDyn(&[]), x.sum());
        let dim = x.raw_dim();
        self.tape.push("sum", Rc::new(y), &[self], move |g, _| {
            vec![Some(ArrayD::from_elem(dim.clone(), g.sum()))]
        })
    }

    pub fn mean(self) -> Result<Self> {
        let n = self.value().len();
        self.sum()?.scale(T::lit(1.0 / n as f64))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(TensorError::Domain {
                op: "sum_axis",
                detail: format!("axis {axis} out of range for {:?}", x.shape()),
            });
        }
        let y = x.sum_axis(Axis(axis));
        let dim = x.raw_dim();
        self.tape.push("sum_axis", Rc::new(y), &[self], move |g, _| {
            let g = g.view().insert_axis(Axis(axis));
            vec![Some(g.broadcast(dim.clone()).expect("sum_axis grad").to_owned())]
        })
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self> {
        let n = self.value().shape().get(axis).copied().unwrap_or(1);
        self.sum_axis(axis)?.scale(T::lit(1.0 / n as f64))
    }

    /// Diagonal of the last two (square) axes: `[.., d, d] -> [.., d]`.
    pub fn diagonal(self) -> Result<Self> {
        let x = self.value();
        let nd = x.ndim();
        if nd < 2 || x.shape()[nd - 1] != x.shape()[nd - 2] {
            return Err(TensorError::Domain {
                op: "diagonal",
                detail: format!("needs square trailing axes, got {:?}", x.shape()),
            });
        }
        let d = x.shape()[nd - 1];
        let lead: usize = x.shape()[..nd - 2].iter().product();
        let x3 = x
            .view()
            .into_shape_with_order((lead, d, d))
            .expect("standard layout");
        let y = ndarray::Array2::from_shape_fn((lead, d), |(b, i)| x3[[b, i, i]]);
        let mut out_shape = x.shape()[..nd - 1].to_vec();
        out_shape[nd - 2] = d;
        let y = y.into_shape_with_order(IxDyn(&out_shape)).expect("diag shape");
        let in_shape = x.shape().to_vec();
        self.tape.push("diagonal", Rc::new(y), &[self], move |g, _| {
            let g2 = g.view().into_shape_with_order((lead, d)).expect("diag grad");
            let mut gx = ndarray::Array3::<T>::zeros((lead, d, d));
            for b in 0..lead {
                for i in 0..d {
                    gx[[b, i, i]] = g2[[b, i]];
                }
            }
            vec![Some(gx.into_shape_with_order(IxDyn(&in_shape)).expect("diag grad"))]
        })
    }
}

pub(crate) fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
