//! Exact derivatives for model training.
//!
//! Input derivatives (the `u_t`, `u_x`, `u_xx`, ... terms of the PDE
//! residuals) are obtained by second-order forward mode ([`Dual2`]); loss
//! gradients with respect to parameters by reverse mode over the recorded
//! computation ([`Tape`]), so second-order input-derivative terms inside the
//! loss differentiate exactly.

pub mod dual;
pub mod scalar;
pub mod tape;

pub use dual::{dual2_chain, Dual2, ElemFn};
pub use scalar::Scalar;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Value and first/second derivative of one output component along one
/// seeded input axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deriv2 {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Differentiates a node-wise evaluator along one input axis, holding every
/// other coordinate fixed. Returns one [`Deriv2`] per output component.
pub fn input_derivatives<F>(model_eval: F, point: &[f64], axis: usize) -> Result<Vec<Deriv2>>
where
    F: Fn(&[Dual2<f64>]) -> Result<Vec<Dual2<f64>>>,
{
    if axis >= point.len() {
        return Err(Error::Dimension {
            context: "input_derivatives axis".into(),
            expected: point.len(),
            got: axis,
        });
    }
    let inputs: Vec<Dual2<f64>> = point
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k == axis {
                Dual2::seeded(v)
            } else {
                Dual2::constant(v)
            }
        })
        .collect();
    let outputs = model_eval(&inputs)?;
    outputs
        .into_iter()
        .enumerate()
        .map(|(c, d)| {
            let (value, first, second) = d.values();
            if value.is_finite() && first.is_finite() && second.is_finite() {
                Ok(Deriv2 {
                    value,
                    first,
                    second,
                })
            } else {
                Err(Error::NonFinite {
                    context: format!("input_derivatives output component {}", c),
                })
            }
        })
        .collect()
}

/// A scalar loss over a flat parameter vector, evaluable with any [`Scalar`].
pub trait ParamObjective {
    fn eval<S: Scalar>(&self, params: &[S]) -> Result<S>;
}

/// Loss value plus exact gradient with respect to every parameter.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

/// Reverse-mode gradient of `obj` at `params`.
pub fn loss_gradient<O: ParamObjective>(obj: &O, params: &[f64]) -> Result<GradReport> {
    let tape = Tape::with_capacity(params.len() * 4);
    let vars: Vec<Var> = params.iter().map(|&p| tape.var(p)).collect();
    let out = obj.eval::<Var>(&vars)?;
    let loss = out.value();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "loss value".into(),
        });
    }
    let adj = tape.adjoints(out);
    let gradient: Vec<f64> = vars.iter().map(|v| adj[v.index()]).collect();
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient entry {}", i),
        });
    }
    Ok(GradReport { loss, gradient })
}

/// Central finite-difference gradient; the independent oracle used by the
/// gradient-consistency tests.
pub fn finite_difference_gradient<F>(f: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = params.to_vec();
    let mut g = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}
