//! Central-difference gradient checking.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{CompGraph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences and returns the largest
/// `|analytic − numeric| / max(1, |analytic|)` over all parameter entries.
///
/// `f` builds the function on a fresh graph from the parameter leaves.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut CompGraph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = CompGraph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).item())
    };

    let mut g = CompGraph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for i in 0..params[pi].numel() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[i];
            let err = libm::fabs(a - numeric) / libm::fabs(a).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sum_of_squares() {
        let p = Tensor::vector(vec![0.3, -0.8, 0.9, 0.05]);
        let err = grad_check(
            |g, v| {
                let s = g.square(v[0]);
                Ok(g.sum(s))
            },
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(|g, _| Ok(g.scalar(3.5)), &[p], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(grad_check(|g, _| Ok(g.scalar(0.0)), &[], 0.0).is_err());
    }
}
