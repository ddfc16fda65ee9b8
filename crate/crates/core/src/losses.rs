//! Smooth-L1 and norm-in-norm losses over one batch.
//!
//! Both losses average over the batch. The norm-in-norm term compares
//! per-batch z-scores of predictions and labels using population moments,
//! and its gradient includes the dependence of the prediction moments on
//! every prediction.

use serde::Serialize;

use crate::error::{Error, Result};

/// Floor applied to batch standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchMoments {
    pub mu_r: f64,
    pub sigma_r: f64,
    pub mu_m: f64,
    pub sigma_m: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

impl BatchMoments {
    pub fn compute(qr: &[f64], qm: &[f64]) -> Result<Self> {
        check_pair(qr, qm, 1)?;
        let (mu_r, sigma_r) = mean_std(qr);
        let (mu_m, sigma_m) = mean_std(qm);
        Ok(BatchMoments {
            mu_r,
            sigma_r,
            mu_m,
            sigma_m,
        })
    }
}

fn check_pair(qr: &[f64], qm: &[f64], min_len: usize) -> Result<()> {
    if qr.len() != qm.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} labels",
            qr.len(),
            qm.len()
        )));
    }
    if qr.len() < min_len {
        return Err(Error::Parameter(format!(
            "batch of {} is too small, need at least {min_len}",
            qr.len()
        )));
    }
    if qr.iter().chain(qm).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score in loss batch".into()));
    }
    Ok(())
}

pub fn smooth_l1(qr: &[f64], qm: &[f64]) -> Result<f64> {
    check_pair(qr, qm, 1)?;
    let total: f64 = qr
        .iter()
        .zip(qm)
        .map(|(r, m)| {
            let d = (r - m).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum();
    Ok(total / qr.len() as f64)
}

pub fn smooth_l1_grad(qr: &[f64], qm: &[f64]) -> Result<Vec<f64>> {
    check_pair(qr, qm, 1)?;
    let n = qr.len() as f64;
    Ok(qr
        .iter()
        .zip(qm)
        .map(|(r, m)| (r - m).clamp(-1.0, 1.0) / n)
        .collect())
}

fn z_scores(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let (mu, sigma) = mean_std(values);
    let s = sigma.max(SIGMA_FLOOR);
    (values.iter().map(|v| (v - mu) / s).collect(), sigma, s)
}

pub fn nin_loss(qr: &[f64], qm: &[f64]) -> Result<f64> {
    check_pair(qr, qm, 2)?;
    let (zr, _, _) = z_scores(qr);
    let (zm, _, _) = z_scores(qm);
    let total: f64 = zr
        .iter()
        .zip(&zm)
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum();
    Ok(total / qr.len() as f64)
}

/// Gradient of [`nin_loss`] with respect to `qr`.
///
/// With `aᵢ = (zᵢ − tᵢ)/n` the result is `(aⱼ − mean(a) − zⱼ·mean(a∘z)) / σ`
/// while σ is above the floor; once the floor is active σ is a constant and
/// the last term drops.
pub fn nin_grad(qr: &[f64], qm: &[f64]) -> Result<Vec<f64>> {
    check_pair(qr, qm, 2)?;
    let n = qr.len() as f64;
    let (zr, sigma, s) = z_scores(qr);
    let (zm, _, _) = z_scores(qm);
    let a: Vec<f64> = zr.iter().zip(&zm).map(|(z, t)| (z - t) / n).collect();
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_az = if sigma > SIGMA_FLOOR {
        a.iter().zip(&zr).map(|(ai, zi)| ai * zi).sum::<f64>() / n
    } else {
        0.0
    };
    Ok(a.iter()
        .zip(&zr)
        .map(|(aj, zj)| (aj - mean_a - zj * mean_az) / s)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValue {
    pub smooth_l1: f64,
    pub nin: f64,
    pub total: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// `smooth_l1 + λ·nin`. The NiN term needs at least two samples.
pub fn combined_loss(qr: &[f64], qm: &[f64], lambda: f64) -> Result<LossValue> {
    check_lambda(lambda)?;
    let sl = smooth_l1(qr, qm)?;
    let nin = nin_loss(qr, qm)?;
    Ok(LossValue {
        smooth_l1: sl,
        nin,
        total: sl + lambda * nin,
    })
}

pub fn combined_loss_grad(qr: &[f64], qm: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let sl = smooth_l1_grad(qr, qm)?;
    let nin = nin_grad(qr, qm)?;
    Ok(sl.iter().zip(&nin).map(|(a, b)| a + lambda * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff_check;

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(smooth_l1(&[2.0], &[0.0]).unwrap(), 1.5);
        assert_eq!(smooth_l1(&[0.5], &[0.0]).unwrap(), 0.125);
        assert!(matches!(smooth_l1(&[], &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn smooth_l1_is_c1_at_one() {
        let h = 1e-9;
        let below = smooth_l1_grad(&[1.0 - h], &[0.0]).unwrap()[0];
        let above = smooth_l1_grad(&[1.0 + h], &[0.0]).unwrap()[0];
        assert!((below - 1.0).abs() < 1e-8 && (above - 1.0).abs() < 1e-12);
        let v_below = smooth_l1(&[1.0 - h], &[0.0]).unwrap();
        let v_above = smooth_l1(&[1.0 + h], &[0.0]).unwrap();
        assert!((v_below - v_above).abs() < 1e-8);
    }

    #[test]
    fn nin_reversed_triplet() {
        // z_r = (−√1.5, 0, √1.5), z_m = −z_r, so each squared gap is 4·1.5 = 6 or 0.
        let v = nin_loss(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn nin_zero_for_positive_affine_labels() {
        let qr = [0.3, -1.2, 4.4, 2.0, 0.0];
        let qm: Vec<f64> = qr.iter().map(|v| 3.5 * v - 7.0).collect();
        assert!(nin_loss(&qr, &qm).unwrap().abs() < 1e-12);
        assert!(nin_grad(&qr, &qm).unwrap().iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn nin_constant_labels_stay_finite() {
        let v = nin_loss(&[1.0, 2.0, 4.0], &[5.0, 5.0, 5.0]).unwrap();
        assert!(v.is_finite());
        assert!(nin_grad(&[1.0, 2.0, 4.0], &[5.0; 3])
            .unwrap()
            .iter()
            .all(|g| g.is_finite()));
        let v = nin_loss(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn nin_needs_two_samples() {
        assert!(matches!(nin_loss(&[1.0], &[1.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn combined_lambda_zero_is_smooth_l1() {
        let qr = [0.1, 2.5, 7.0];
        let qm = [1.0, 2.0, 3.0];
        let c = combined_loss(&qr, &qm, 0.0).unwrap();
        assert_eq!(c.total, smooth_l1(&qr, &qm).unwrap());
    }

    #[test]
    fn combined_default_lambda_on_triplet() {
        let qr = [1.0, 2.0, 3.0];
        let qm = [30.0, 20.0, 10.0];
        let c = combined_loss(&qr, &qm, 1.0).unwrap();
        // smooth-L1 gaps 29, 18, 7 → (28.5 + 17.5 + 6.5) / 3
        assert!((c.smooth_l1 - 17.5).abs() < 1e-12);
        assert!((c.total - (2.0 + 17.5)).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(matches!(
            combined_loss(&[1.0, 2.0], &[1.0, 2.0], -0.1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn combined_gradient_matches_finite_difference() {
        let qr = [0.4, 3.1, -0.8, 2.2, 5.5, 1.0, 0.05, 4.0];
        let qm = [1.0, 2.5, 0.0, 2.0, 9.0, 1.7, 0.3, 6.2];
        let g = combined_loss_grad(&qr, &qm, 1.0).unwrap();
        let r = finite_diff_check(
            |p| combined_loss(p, &qm, 1.0).unwrap().total,
            &qr,
            &g,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn moments_use_population_normalization() {
        let m = BatchMoments::compute(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap();
        assert!((m.sigma_r - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((m.mu_m - 20.0).abs() < 1e-15);
    }
}
