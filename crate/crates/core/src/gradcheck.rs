//! Central finite differences, the reference every backward rule is checked
//! against.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every coordinate `i`.
pub fn finite_diff_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Gradients smaller than this are compared absolutely: their finite-difference
/// estimate is dominated by rounding in the loss.
pub const GRAD_FLOOR: f64 = 1e-3;

/// `|a − b| / max(|a|, |b|, GRAD_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Outcome of comparing backward against finite differences for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps probes crossed a ReLU kink and so have no
    /// well-defined central difference.
    pub skipped: usize,
}

/// Compares the backward gradient of a scalar-valued recorded function with
/// central differences, for every coordinate of every input.
pub fn check_function<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<Vec<InputCheck>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let run = |values: &[Tensor]| -> Result<(f64, u64)> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok((out.item(), tape.kink_signature()))
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&tape, &vars)?;
    let base_signature = tape.kink_signature();
    let grads = tape.backward(out)?;

    let mut reports = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut report = InputCheck {
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let (plus, sig_plus) = run(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let (minus, sig_minus) = run(&probe)?;
            probe[k].data_mut()[i] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            report.max_rel_error = report
                .max_rel_error
                .max(relative_error(analytic.data()[i], numeric));
            report.checked += 1;
        }
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_unit_gradient() {
        let x = Tensor::from_vec(vec![0.3, -1.0, 2.5]);
        let g = finite_diff_gradient(|t| t.data().iter().sum(), &x, 1e-4);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn square_at_three_is_six() {
        let x = Tensor::from_vec(vec![3.0]);
        let g = finite_diff_gradient(|t| t.data()[0] * t.data()[0], &x, 1e-4);
        // Central differences are exact for quadratics up to rounding.
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }
}
