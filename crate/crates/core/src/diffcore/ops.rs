//! Layer primitives. Every forward is a pure function of its inputs; every
//! backward takes the forward inputs plus the upstream gradient.

use crate::error::{Error, Result};

use super::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub x: Matrix,
    pub w: Matrix,
    pub b: Matrix,
}

fn check_linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<()> {
    if x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::Dimension(format!(
            "linear layer: input {} , weight {} , bias {}",
            x.shape_str(),
            w.shape_str(),
            b.shape_str()
        )));
    }
    Ok(())
}

/// `x·w + b`, with `b` broadcast over rows.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_linear(x, w, b)?;
    let mut out = x.matmul(w)?;
    let bias = b.as_slice();
    let cols = out.cols();
    for row in out.as_mut_slice().chunks_exact_mut(cols) {
        for (o, &bj) in row.iter_mut().zip(bias) {
            *o += bj;
        }
    }
    Ok(out)
}

pub fn linear_backward(x: &Matrix, w: &Matrix, upstream: &Matrix) -> Result<LinearGrads> {
    if upstream.rows() != x.rows() || upstream.cols() != w.cols() || x.cols() != w.rows() {
        return Err(Error::Dimension(format!(
            "linear backward: input {} , weight {} , upstream {}",
            x.shape_str(),
            w.shape_str(),
            upstream.shape_str()
        )));
    }
    let (w_grad, b_grad) = linear_backward_params(x, upstream)?;
    Ok(LinearGrads {
        x: upstream.matmul_transpose(w)?,
        w: w_grad,
        b: b_grad,
    })
}

/// Weight and bias gradients only: `xᵀ·upstream` and the column sums of
/// `upstream`.
pub fn linear_backward_params(x: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    let grad_w = x.transpose_matmul(upstream)?;
    let mut grad_b = Matrix::zeros(1, upstream.cols());
    for r in 0..upstream.rows() {
        for (g, &u) in grad_b.as_mut_slice().iter_mut().zip(upstream.row(r)) {
            *g += u;
        }
    }
    Ok((grad_w, grad_b))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!(
            "ELU alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

#[inline]
pub fn elu_scalar(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

pub fn elu(x: &Matrix, alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    Ok(x.map(|v| elu_scalar(v, alpha)))
}

pub fn elu_backward(x: &Matrix, alpha: f64, upstream: &Matrix) -> Result<Matrix> {
    check_alpha(alpha)?;
    x.check_same_shape(upstream, "elu backward")?;
    let data = x
        .as_slice()
        .iter()
        .zip(upstream.as_slice())
        .map(|(&v, &g)| g * elu_derivative(v, alpha))
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// The subgradient at exactly zero is taken as zero.
pub fn relu_backward(x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    x.check_same_shape(upstream, "relu backward")?;
    let data = x
        .as_slice()
        .iter()
        .zip(upstream.as_slice())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

/// Second-order pooling `F·Fᵀ` of a `c×l` feature map.
///
/// Only the upper triangle is computed; the lower triangle is a copy, so the
/// result is symmetric bit for bit.
pub fn bilinear_pool(features: &Matrix) -> Result<Matrix> {
    let (c, l) = features.shape();
    if c == 0 || l == 0 {
        return Err(Error::Dimension(format!(
            "bilinear pooling needs a non-empty feature map, got {}",
            features.shape_str()
        )));
    }
    let mut out = Matrix::zeros(c, c);
    for i in 0..c {
        let ri = features.row(i);
        for j in i..c {
            let rj = features.row(j);
            let v: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// Gradient of `F·Fᵀ` with respect to `F`: `(G + Gᵀ)·F`.
pub fn bilinear_pool_backward(features: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    let c = features.rows();
    if upstream.shape() != (c, c) {
        return Err(Error::Dimension(format!(
            "bilinear pooling backward: features {} , upstream {}",
            features.shape_str(),
            upstream.shape_str()
        )));
    }
    let mut sym = upstream.clone();
    for i in 0..c {
        for j in 0..c {
            sym.set(i, j, upstream.get(i, j) + upstream.get(j, i));
        }
    }
    sym.matmul(features)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}
