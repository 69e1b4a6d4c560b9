//! Central finite differences over a whole parameter set.

use crate::error::{FddError, Result};
use crate::params::ParamSet;

/// Approximates `∂loss/∂θ` coordinate-wise by `(f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &ParamSet, eps: f64) -> Result<ParamSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(FddError::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let base = params.flatten();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        flat[k] = base[k] + eps;
        probe.assign_flat(&flat)?;
        let up = loss_fn(&probe)?;
        flat[k] = base[k] - eps;
        probe.assign_flat(&flat)?;
        let down = loss_fn(&probe)?;
        flat[k] = base[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(FddError::Numeric(format!("loss not finite while probing coordinate {k}")));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    let mut out = params.zeros_like();
    out.assign_flat(&grad)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamSet {
        let mut p = ParamSet::zeros(&[(1, 1)], 1, 2).unwrap();
        p.classifier_b[0] = v;
        p
    }

    #[test]
    fn linear_function_recovers_slope() {
        let c = 2.5;
        for eps in [1e-1, 1e-3, 0.5] {
            let g = finite_diff_grad(|p| Ok(c * p.classifier_b[0]), &one_param(1.0), eps).unwrap();
            assert!((g.classifier_b[0] - c).abs() < 1e-12);
            assert_eq!(g.classifier_b[1], 0.0);
        }
    }

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|p| Ok(p.classifier_b[0].powi(2)), &one_param(3.0), 1e-4).unwrap();
        assert!((g.classifier_b[0] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn quartic_at_zero_is_exactly_zero() {
        let g = finite_diff_grad(|p| Ok(p.classifier_b[0].powi(4)), &one_param(0.0), 1e-3).unwrap();
        assert_eq!(g.classifier_b[0], 0.0);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let r = finite_diff_grad(|p| Ok(1.0 / (p.classifier_b[0] - 1e-4)), &one_param(0.0), 1e-4);
        assert!(matches!(r, Err(FddError::Numeric(_))));
        assert!(finite_diff_grad(|_| Ok(0.0), &one_param(0.0), 0.0).is_err());
    }
}
