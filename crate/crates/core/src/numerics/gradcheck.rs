//! Central finite-difference oracle for checking analytic gradients.
//! Test-only: compiled under `cfg(test)` or the `testing` feature.

use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Step used for central differences on 64-bit data.
pub const FD_STEP: f64 = 1e-4;

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and numeric
/// gradients; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = libm::sqrt(analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>());
    let na = libm::sqrt(analytic.iter().map(|a| a * a).sum::<f64>());
    let nn = libm::sqrt(numeric.iter().map(|a| a * a).sum::<f64>());
    let denom = na.max(nn);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Builds `f` on fresh graphs with every input as a trainable leaf and
/// returns, per input, the relative error between the tape gradient and
/// central finite differences of the scalar output.
pub fn check<F>(inputs: &[Tensor], f: F) -> Vec<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars);
        g.scalar(out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    g.backward(out).expect("backward");
    let mut errors = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = g.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; input.len()]);
        let mut numeric = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    errors
}
