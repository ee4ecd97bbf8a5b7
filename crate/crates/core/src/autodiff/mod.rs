//! Scalar automatic differentiation.
//!
//! Forward mode ([`Dual`]) carries the time derivative of the network output;
//! reverse mode ([`Tape`]/[`Var`]) accumulates gradients over the parameter
//! vector. Nesting them as `Dual<Var>` records the tangent arithmetic on the
//! tape so the time derivative contributes to parameter gradients.

mod dual;
mod scalar;
mod tape;

pub use dual::Dual;
pub use scalar::{sigmoid, softplus, softplus_inverse, Scalar};
pub use tape::{gradient, GradResult, Tape, Var};

use crate::error::{Error, Result};

/// Value and exact time derivative of `f(params, t, r)`.
///
/// `f` sees the parameters as tangent-free constants, `t` seeded with unit
/// tangent and `r` with zero tangent.
pub fn eval_with_time_tangent<F>(f: F, params: &[f64], t: f64, r: f64) -> Result<Dual<f64>>
where
    F: Fn(&[Dual<f64>], Dual<f64>, Dual<f64>) -> Dual<f64>,
{
    let lifted: Vec<Dual<f64>> = params.iter().map(|&p| Dual::lift(p)).collect();
    let out = f(&lifted, Dual::variable(t), Dual::lift(r));
    if !(out.re.is_finite() && out.eps.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value or time derivative at (t, r) = ({t}, {r})")));
    }
    Ok(out)
}
