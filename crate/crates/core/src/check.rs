//! Finite-difference checking for tape closures that return crate errors.

use renormlab_tensor::{ScalarFunction, Tape, Tensor, TensorError, Var};

use crate::error::{LabError, Result};

/// Like [`renormlab_tensor::TapeFunction`] but for closures returning
/// [`LabError`]s, so model and loss code can be fed to `grad_check`.
pub struct LabTapeFunction<F>(pub F);

fn lower(e: LabError) -> TensorError {
    match e {
        LabError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    }
}

impl<F> ScalarFunction for LabTapeFunction<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn value(&self, x: &Tensor) -> renormlab_tensor::Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = (self.0)(&mut tape, v).map_err(lower)?;
        tape.value(out).item()
    }

    fn gradient(&self, x: &Tensor) -> renormlab_tensor::Result<Tensor> {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = (self.0)(&mut tape, v).map_err(lower)?;
        Ok(tape.backward(out)?.get_or_zeros(v))
    }
}
