//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// zero on both sides compare as equal instead of 0/0. Scaled by
/// `max(1, |f(params)|)` in [`finite_diff_check`], since central-difference
/// round-off grows with the magnitude of the objective.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, RELATIVE_ERROR_FLOOR)
}

fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against the central difference of `f` at `params`.
///
/// `f` is evaluated at `params ± step·eᵢ` for every coordinate.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut report = GradCheckReport {
        checked: params.len(),
        max_rel_error: 0.0,
        worst_index: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        tolerance,
        passed: true,
    };
    let f0 = f(params);
    if !f0.is_finite() {
        return Err(Error::Numeric(format!(
            "objective is not finite at the base point ({f0})"
        )));
    }
    let floor = RELATIVE_ERROR_FLOOR * f0.abs().max(1.0);
    let mut probe = params.to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around parameter {i} ({plus}, {minus})"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error_with_floor(a, numeric, floor);
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = finite_diff_check(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5, 1e-9).unwrap();
        assert!(r.passed);
        assert!((r.worst_numeric - 6.0).abs() < 1e-9);
    }

    #[test]
    fn empty_parameter_set_passes() {
        let r = finite_diff_check(|_| 1.0, &[], &[], 1e-5, 1e-4).unwrap();
        assert_eq!(r.checked, 0);
        assert!(r.passed);
        assert_eq!(r.worst_index, None);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = finite_diff_check(|p| p[0] * p[0], &[3.0], &[5.0], 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_index, Some(0));
    }

    #[test]
    fn non_finite_objective_is_error() {
        let r = finite_diff_check(|p| p[0].ln(), &[0.0], &[0.0], 1e-5, 1e-4);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn step_must_be_positive() {
        assert!(matches!(
            finite_diff_check(|p| p[0], &[1.0], &[1.0], 0.0, 1e-4),
            Err(Error::Parameter(_))
        ));
    }
}
