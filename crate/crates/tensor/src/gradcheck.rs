//! Central finite-difference verification of analytic gradients.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A scalar function with a claimed gradient.
pub trait ScalarFunction {
    fn value(&self, x: &Tensor) -> Result<f64>;
    fn gradient(&self, x: &Tensor) -> Result<Tensor>;
}

/// Adapts a tape-building closure into a [`ScalarFunction`]: the value is
/// the closure's scalar output, the gradient comes from [`Tape::backward`].
pub struct TapeFunction<F>(pub F);

impl<F> ScalarFunction for TapeFunction<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn value(&self, x: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = (self.0)(&mut tape, v)?;
        tape.value(out).item()
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = (self.0)(&mut tape, v)?;
        Ok(tape.backward(out)?.get_or_zeros(v))
    }
}

/// Worst per-coordinate relative error between the analytic gradient and
/// central differences with step `eps`. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(f: &impl ScalarFunction, x: &Tensor, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(TensorError::Contract("grad_check needs eps > 0".into()));
    }
    let analytic = f.gradient(x)?;
    if analytic.shape() != x.shape() {
        return Err(TensorError::shape(
            "grad_check",
            format!("gradient shape {:?} vs input {:?}", analytic.shape(), x.shape()),
        ));
    }
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f.value(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f.value(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::numeric("grad_check", "non-finite function value"));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
