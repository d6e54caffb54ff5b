//! Central finite differences for checking tape gradients.
//!
//! The numerical side only ever evaluates the forward pass, so it stays
//! independent of every backward rule it is used to check.

use ndarray::ArrayD;

use super::{Result, Tape, Tensor};

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F>(mut f: F, x: &ArrayD<f64>, step: f64) -> ArrayD<f64>
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    let mut probe = x.as_standard_layout().into_owned();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe.as_slice().expect("standard layout")[i];
        probe.as_slice_mut().expect("standard layout")[i] = orig + step;
        let up = f(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig - step;
        let down = f(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    ArrayD::from_shape_vec(x.raw_dim(), grad).expect("one entry per input")
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: ArrayD<f64>,
    pub numeric: ArrayD<f64>,
    pub relative_error: f64,
}

/// Compares the tape gradient of a scalar function of one input against
/// central differences with the given step.
pub fn check<F>(build: F, x: &ArrayD<f64>, step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, Tensor<'t, f64>) -> Result<Tensor<'t, f64>>,
{
    let tape = Tape::new();
    let input = tape.param(x.clone());
    let out = build(&tape, input)?;
    let analytic = tape.backward(out)?.wrt(input);
    let mut failure = None;
    let numeric = central_difference(
        |p| {
            let tape = Tape::new();
            let input = tape.constant(p.clone());
            match build(&tape, input) {
                Ok(t) => t.item(),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        x,
        step,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let relative_error = relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        relative_error,
    })
}
