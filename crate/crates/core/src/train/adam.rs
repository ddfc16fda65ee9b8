use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn new(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advances the step counter and applies one update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], hyper: AdamHyper) -> Result<()> {
        let t = self.t + 1;
        adam_step(params, grads, self, hyper, t)?;
        self.t = t;
        Ok(())
    }
}

/// Bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hyper: AdamHyper,
    t: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} parameters, {} gradients, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if t == 0 {
        return Err(Error::Parameter("adam step counter starts at 1".into()));
    }
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0, 0.0];
        let mut s = AdamState::new(3);
        for _ in 0..10 {
            s.step(&mut p, &[0.0; 3], AdamHyper::new(0.1)).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        s.step(&mut p, &[1.0], AdamHyper::new(1e-3)).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −lr·1/(1 + eps)
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn minimizes_square() {
        let mut x = vec![5.0];
        let mut s = AdamState::new(1);
        for _ in 0..500 {
            let g = vec![2.0 * x[0]];
            s.step(&mut x, &g, AdamHyper::new(0.1)).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(s
            .step(&mut [0.0, 0.0], &[1.0], AdamHyper::new(0.1))
            .is_err());
        assert!(adam_step(
            &mut [0.0],
            &[0.0],
            &mut AdamState::new(1),
            AdamHyper::new(0.1),
            0
        )
        .is_err());
    }
}
