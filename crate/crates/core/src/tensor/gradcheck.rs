//! Central finite-difference checks of tape gradients, run in `f64`.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.len() != 1 {
        return Err(Error::shape(format!("grad_check needs a scalar function, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Max relative error `|a - n| / max(1e-8, |a| + |n|)` between tape gradients
/// and central differences, over every element of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    grad_check_at(f, inputs, eps, &all)
}

/// Like [`grad_check_many`], restricted to the listed `(input, element)`
/// positions.
pub fn grad_check_at<F>(f: F, inputs: &[Tensor<f64>], eps: f64, at: &[(usize, usize)]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if out.value().len() != 1 {
        return Err(Error::shape(format!(
            "grad_check needs a scalar function, got {:?}",
            out.shape()
        )));
    }
    let grads = out.backward()?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for &(k, i) in at {
        if k >= inputs.len() || i >= inputs[k].len() {
            return Err(Error::invalid(format!("no element {i} in input {k}")));
        }
        let orig = inputs[k].data()[i];
        probe[k].data_mut()[i] = orig + eps;
        let fp = eval_scalar(&f, &probe)?;
        probe[k].data_mut()[i] = orig - eps;
        let fm = eval_scalar(&f, &probe)?;
        probe[k].data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[k].data()[i], numeric));
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(x), eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::from_fn(&[3, 3], |i| i as f64 - 4.0);
        let e = grad_check(|_, v| v.sum(), &x, 1e-3).unwrap();
        assert!(e < 1e-10, "{e}");
    }

    #[test]
    fn sigmoid_sum_within_tolerance() {
        let x = Tensor::from_fn(&[10], |i| -2.0 + 0.4 * i as f64);
        let e = grad_check(|_, v| v.sigmoid()?.sum(), &x, 1e-3).unwrap();
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(grad_check(|_, v| v.relu(), &x, 1e-3).is_err());
    }
}
