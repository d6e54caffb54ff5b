use std::rc::Rc;

use ndarray::{ArrayD, Axis, Zip};

use super::{Result, Tensor, TensorError};
use crate::Scalar;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, `erfc(-x/√2)/2`.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * Scalar::erfc(-x * T::lit(std::f64::consts::FRAC_1_SQRT_2))
}

pub fn normal_pdf<T: Scalar>(x: T) -> T {
    T::lit(INV_SQRT_2PI) * (T::lit(-0.5) * x * x).exp()
}

fn softmax_last_axis<T: Scalar>(x: &ArrayD<T>, inv_t: T) -> ArrayD<T> {
    let mut y = x.mapv(|v| v * inv_t);
    let last = Axis(y.ndim() - 1);
    for mut lane in y.lanes_mut(last) {
        let m = lane.fold(T::neg_infinity(), |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - m).exp());
        let s = lane.sum();
        lane.mapv_inplace(|v| v / s);
    }
    y
}

impl<'t, T: Scalar> Tensor<'t, T> {
    /// Elementwise standard normal CDF.
    pub fn normal_cdf(self) -> Result<Self> {
        self.unary("normal_cdf", normal_cdf, |x, _| normal_pdf(x))
    }

    /// `softmax(v / t)` along the last axis.
    pub fn softmax(self, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(TensorError::Domain {
                op: "softmax",
                detail: format!("temperature must be positive, got {temperature}"),
            });
        }
        let x = self.value();
        if x.ndim() == 0 {
            return Err(TensorError::Domain {
                op: "softmax",
                detail: "needs at least one axis".into(),
            });
        }
        let inv_t = temperature.recip();
        let y = Rc::new(softmax_last_axis(&x, inv_t));
        let yc = Rc::clone(&y);
        self.tape.push("softmax", y, &[self], move |g, _| {
            let last = Axis(g.ndim() - 1);
            let mut gx = g * &*yc;
            for (mut lane, ylane) in gx.lanes_mut(last).into_iter().zip(yc.lanes(last)) {
                let s = lane.sum();
                Zip::from(&mut lane)
                    .and(&ylane)
                    .for_each(|gv, &yv| *gv = (*gv - yv * s) * inv_t);
            }
            vec![Some(gx)]
        })
    }

    /// `log(softmax(v))` along the last axis.
    pub fn log_softmax(self) -> Result<Self> {
        let x = self.value();
        if x.ndim() == 0 {
            return Err(TensorError::Domain {
                op: "log_softmax",
                detail: "needs at least one axis".into(),
            });
        }
        let mut y = (*x).clone();
        let last = Axis(y.ndim() - 1);
        for mut lane in y.lanes_mut(last) {
            let m = lane.fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = m + lane.fold(T::zero(), |s, &v| s + (v - m).exp()).ln();
            lane.mapv_inplace(|v| v - lse);
        }
        let y = Rc::new(y);
        let yc = Rc::clone(&y);
        self.tape.push("log_softmax", y, &[self], move |g, _| {
            let last = Axis(g.ndim() - 1);
            let mut gx = g.clone();
            for (mut lane, ylane) in gx.lanes_mut(last).into_iter().zip(yc.lanes(last)) {
                let s = lane.sum();
                Zip::from(&mut lane)
                    .and(&ylane)
                    .for_each(|gv, &yv| *gv -= yv.exp() * s);
            }
            vec![Some(gx)]
        })
    }

    /// `log(1 - softmax(v / t))` along the last axis, evaluated without
    /// forming `1 - p`. For the leading entry the complement mass is summed
    /// directly over the other entries, so the result stays exact when that
    /// entry holds nearly all of the mass.
    pub fn log1m_softmax(self, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(TensorError::Domain {
                op: "log1m_softmax",
                detail: format!("temperature must be positive, got {temperature}"),
            });
        }
        let x = self.value();
        if x.ndim() == 0 || x.shape()[x.ndim() - 1] < 2 {
            return Err(TensorError::Domain {
                op: "log1m_softmax",
                detail: "needs at least two entries along the last axis".into(),
            });
        }
        let inv_t = temperature.recip();
        let last = Axis(x.ndim() - 1);
        let p = Rc::new(softmax_last_axis(&x, inv_t));
        let mut y = ArrayD::zeros(x.raw_dim());
        // softmax restricted to the entries other than the leading one
        let mut others = ArrayD::zeros(x.raw_dim());
        let mut leaders = Vec::with_capacity(x.len() / x.shape()[x.ndim() - 1]);
        for ((xl, pl), (mut yl, mut ol)) in x
            .lanes(last)
            .into_iter()
            .zip(p.lanes(last))
            .zip(y.lanes_mut(last).into_iter().zip(others.lanes_mut(last)))
        {
            let mut a = 0;
            for (i, &v) in xl.iter().enumerate() {
                if v > xl[a] {
                    a = i;
                }
            }
            let m = xl[a];
            let m2 = xl
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != a)
                .fold(T::neg_infinity(), |acc, (_, &v)| acc.max(v));
            let s: T = xl.iter().map(|&v| ((v - m) * inv_t).exp()).sum();
            let mut s2 = T::zero();
            for (i, &v) in xl.iter().enumerate() {
                if i != a {
                    let e = ((v - m2) * inv_t).exp();
                    ol[i] = e;
                    s2 += e;
                }
            }
            ol.mapv_inplace(|e| e / s2);
            for (i, yv) in yl.iter_mut().enumerate() {
                *yv = if i == a {
                    (m2 - m) * inv_t + s2.ln() - s.ln()
                } else {
                    (-pl[i]).ln_1p()
                };
            }
            leaders.push(a);
        }
        let pc = Rc::clone(&p);
        self.tape.push("log1m_softmax", Rc::new(y), &[self], move |g, _| {
            let last = Axis(g.ndim() - 1);
            let mut gx = ArrayD::zeros(g.raw_dim());
            for (((gl, pl), ol), (mut gxl, &a)) in g
                .lanes(last)
                .into_iter()
                .zip(pc.lanes(last))
                .zip(others.lanes(last))
                .zip(gx.lanes_mut(last).into_iter().zip(&leaders))
            {
                // dy_i/dv_j = (p_i p_j / (1 - p_i) - δ_ij p_i) / t, and for the
                // leading entry p_j / (1 - p_a) is the restricted softmax
                let c: Vec<T> = (0..gl.len())
                    .map(|i| if i == a { T::zero() } else { gl[i] * pl[i] / (T::one() - pl[i]) })
                    .collect();
                let total: T = c.iter().copied().sum();
                let lead = gl[a] * pl[a];
                for j in 0..gl.len() {
                    let mut v = -gl[j] * pl[j] + pl[j] * (total - c[j]);
                    if j != a {
                        v += lead * ol[j];
                    }
                    gxl[j] = v * inv_t;
                }
            }
            vec![Some(gx)]
        })
    }
}
