use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Magnitudes below this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-5)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let out = f(&tape, tape.constant(x.clone()))?;
    let v = out.value();
    if v.len() != 1 {
        return Err(Error::Contract(format!("grad check needs a scalar function, got shape {:?}", v.shape())));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::Numeric(format!("function value {y} is not finite")));
    }
    Ok(y)
}

/// Largest relative error between the tape gradient of scalar `f` at `x`
/// and a central finite difference with step `eps`, over every element.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &all)
}

/// As [`grad_check`], restricted to the flat indices in `at`.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, eps: f64, at: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&tape, xv)?;
    tape.backward(out)?;
    let grad = xv.grad().unwrap_or_else(|| Tensor::zeros(x.shape()).expect("valid shape"));
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in at {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(grad.data()[i], fd));
    }
    Ok(worst)
}
