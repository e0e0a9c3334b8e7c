use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Magnitudes below this are compared absolutely rather than relatively.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-6 }
    }
}

impl GradCheck {
    /// Largest relative error between the tape gradient of `f` at `x` and
    /// central differences, over every coordinate of `x`. `f` must be
    /// deterministic and return a scalar.
    pub fn run<F>(&self, f: F, x: &Tensor) -> Result<f64>
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone())?;
        let out = f(&mut tape, xv)?;
        tape.backward(out)?;
        let analytic = tape.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

        let eval = |probe: Tensor| -> Result<f64> {
            let mut tape = Tape::new();
            let v = tape.leaf(probe)?;
            let out = f(&mut tape, v)?;
            let y = tape.value(out).item();
            if !y.is_finite() {
                return Err(Error::Diagnostic("function under check returned a non-finite value".into()));
            }
            Ok(y)
        };

        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += self.step;
            let mut minus = x.clone();
            minus.data_mut()[i] -= self.step;
            let numeric = (eval(plus)? - eval(minus)?) / (2.0 * self.step);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.floor);
            worst = worst.max(err);
        }
        Ok(worst)
    }
}

/// [`GradCheck::run`] with the default floor.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    GradCheck { step, ..GradCheck::default() }.run(f, x)
}
