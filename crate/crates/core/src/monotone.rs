//! Dataset-specific quality transformer: a stack of constrained fully
//! connected layers (CFCL) with ELU activations between them.
//!
//! Each CFCL stores an unconstrained `theta` and uses the effective weight
//! `softplus(theta) + WEIGHT_FLOOR`, which is strictly positive for every
//! finite `theta`. A composition of affine maps with positive weights and
//! strictly increasing activations is strictly increasing, so every
//! transformer this module can build maps ℝ→ℝ monotonically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::ops::{self, elu_derivative, elu_scalar, sigmoid, softplus};
use crate::diffcore::{DualBuffer, Matrix};
use crate::error::{Error, Result};

/// Lower bound added to every effective CFCL weight.
pub const WEIGHT_FLOOR: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_DEPTH: usize = 5;
/// Depths accepted without the explicit override.
pub const SUPPORTED_DEPTHS: [usize; 3] = [3, 5, 7];
/// Standard deviation of the zero-mean `theta` initialization.
pub const INIT_THETA_STD: f64 = 0.1;

/// Default layer widths (input width first) for each supported depth.
pub fn default_widths(depth: usize) -> Result<Vec<usize>> {
    match depth {
        3 => Ok(vec![1, 8, 8, 1]),
        5 => Ok(vec![1, 8, 16, 16, 8, 1]),
        7 => Ok(vec![1, 8, 8, 8, 8, 8, 8, 1]),
        _ => Err(Error::Config(format!(
            "no default widths for depth {depth}; supported depths are {SUPPORTED_DEPTHS:?}"
        ))),
    }
}

/// Checks a width list against the depth grid. `allow_any_depth` lifts the
/// grid restriction but the chain must still start and end at width 1.
pub fn validate_widths(widths: &[usize], allow_any_depth: bool) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "transformer needs at least one layer, got widths {widths:?}"
        )));
    }
    let depth = widths.len() - 1;
    if !allow_any_depth && !SUPPORTED_DEPTHS.contains(&depth) {
        return Err(Error::Config(format!(
            "transformer depth {depth} is outside the supported grid {SUPPORTED_DEPTHS:?} (pass the depth override to allow it)"
        )));
    }
    if widths[0] != 1 || widths[depth] != 1 {
        return Err(Error::Config(format!(
            "transformer widths must start and end with 1, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {widths:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfclLayer {
    pub theta: DualBuffer,
    pub bias: DualBuffer,
}

impl CfclLayer {
    pub fn from_parts(theta: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != theta.cols() {
            return Err(Error::Dimension(format!(
                "CFCL theta {} does not match bias {}",
                theta.shape_str(),
                bias.shape_str()
            )));
        }
        Ok(CfclLayer {
            theta: DualBuffer::new(theta),
            bias: DualBuffer::new(bias),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.theta.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.theta.value.cols()
    }

    pub fn effective_weight(&self) -> Matrix {
        self.theta.value.map(|t| softplus(t) + WEIGHT_FLOOR)
    }
}

/// Per-layer parameter gradients plus the gradient with respect to the
/// transformer input.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerGrads {
    pub theta: Vec<Matrix>,
    pub bias: Vec<Matrix>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerOptions {
    pub alpha: f64,
    pub allow_any_depth: bool,
    pub theta_std: f64,
}

impl Default for TransformerOptions {
    fn default() -> Self {
        TransformerOptions {
            alpha: DEFAULT_ALPHA,
            allow_any_depth: false,
            theta_std: INIT_THETA_STD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicTransformer {
    layers: Vec<CfclLayer>,
    alpha: f64,
}

struct Trace {
    /// Input to each layer (`inputs[0]` is the batch column).
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix>,
}

impl MonotonicTransformer {
    /// Seeded initialization on the supported depth grid.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        Self::with_options(widths, seed, TransformerOptions::default())
    }

    pub fn with_options(widths: &[usize], seed: u64, opts: TransformerOptions) -> Result<Self> {
        validate_widths(widths, opts.allow_any_depth)?;
        if !(opts.theta_std >= 0.0 && opts.theta_std.is_finite()) {
            return Err(Error::Config(format!(
                "theta_std must be finite and non-negative, got {}",
                opts.theta_std
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, opts.theta_std)
            .map_err(|e| Error::Config(format!("theta initialization: {e}")))?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect();
                CfclLayer::from_parts(Matrix::from_vec(w[0], w[1], data)?, Matrix::zeros(1, w[1]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, opts.alpha)
    }

    /// Assembles a transformer from explicit layers. The depth grid is not
    /// enforced here; only the layer chain and the scalar in/out widths are.
    pub fn from_layers(layers: Vec<CfclLayer>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "ELU alpha must be positive, got {alpha}"
            )));
        }
        let mut widths = vec![layers.first().map_or(0, CfclLayer::in_dim)];
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != widths[i] {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs but the previous layer produces {}",
                    layer.in_dim(),
                    widths[i]
                )));
            }
            widths.push(layer.out_dim());
        }
        validate_widths(&widths, true)?;
        Ok(MonotonicTransformer { layers, alpha })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.layers.iter().map(CfclLayer::out_dim))
            .collect()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn layers(&self) -> &[CfclLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CfclLayer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.theta.value.len() + l.bias.value.len())
            .sum()
    }

    pub fn min_effective_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.effective_weight().into_vec())
            .fold(f64::INFINITY, f64::min)
    }

    fn check_inputs(values: &[f64], what: &str) -> Result<()> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{what}[{i}] = {} is not finite",
                values[i]
            )));
        }
        Ok(())
    }

    fn trace(&self, qp: &[f64]) -> Result<(Trace, Matrix)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = Matrix::column_vector(qp);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = ops::linear_forward(&x, &layer.effective_weight(), &layer.bias.value)?;
            inputs.push(x);
            x = if i == last {
                z.clone()
            } else {
                ops::elu(&z, self.alpha)?
            };
            pre.push(z);
        }
        Ok((Trace { inputs, pre }, x))
    }

    /// Maps a batch of perceptual qualities to the dataset's score scale.
    pub fn forward(&self, qp: &[f64]) -> Result<Vec<f64>> {
        Self::check_inputs(qp, "qp")?;
        let (_, out) = self.trace(qp)?;
        Ok(out.into_vec())
    }

    /// Unchecked scalar forward; used by the sampling suites.
    pub fn forward_scalar(&self, x: f64) -> f64 {
        let mut act = vec![x];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let theta = &layer.theta.value;
            let bias = layer.bias.value.as_slice();
            let mut next = bias.to_vec();
            for (k, &a) in act.iter().enumerate() {
                for (j, n) in next.iter_mut().enumerate() {
                    *n += a * (softplus(theta.get(k, j)) + WEIGHT_FLOOR);
                }
            }
            if i != last {
                for n in &mut next {
                    *n = elu_scalar(*n, self.alpha);
                }
            }
            act = next;
        }
        act[0]
    }

    /// `dQʳ/dQᵖ` at `x` by forward-mode chain rule.
    pub fn grad_input(&self, x: f64) -> Result<f64> {
        Self::check_inputs(&[x], "qp")?;
        let mut act = vec![x];
        let mut tangent = vec![1.0];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = layer.effective_weight();
            let mut z = layer.bias.value.as_slice().to_vec();
            let mut dz = vec![0.0; layer.out_dim()];
            for k in 0..layer.in_dim() {
                for j in 0..layer.out_dim() {
                    z[j] += act[k] * w.get(k, j);
                    dz[j] += tangent[k] * w.get(k, j);
                }
            }
            if i == last {
                act = z;
                tangent = dz;
            } else {
                tangent = z
                    .iter()
                    .zip(&dz)
                    .map(|(&zj, &d)| d * elu_derivative(zj, self.alpha))
                    .collect();
                act = z.iter().map(|&zj| elu_scalar(zj, self.alpha)).collect();
            }
        }
        Ok(tangent[0])
    }

    /// Gradients of `Σᵢ upstream[i]·forward(qp)[i]` with respect to every
    /// `theta`, every bias, and each input.
    pub fn backward(&self, qp: &[f64], upstream: &[f64]) -> Result<TransformerGrads> {
        if qp.len() != upstream.len() {
            return Err(Error::Dimension(format!(
                "transformer backward: {} inputs but {} upstream gradients",
                qp.len(),
                upstream.len()
            )));
        }
        Self::check_inputs(qp, "qp")?;
        let (trace, _) = self.trace(qp)?;
        let depth = self.layers.len();
        let mut theta_grads = vec![Matrix::zeros(0, 0); depth];
        let mut bias_grads = vec![Matrix::zeros(0, 0); depth];
        let mut g = Matrix::column_vector(upstream);
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            let lg = ops::linear_backward(&trace.inputs[i], &layer.effective_weight(), &g)?;
            let chain = layer.theta.value.map(sigmoid);
            let mut gt = lg.w;
            for (t, c) in gt.as_mut_slice().iter_mut().zip(chain.as_slice()) {
                *t *= c;
            }
            theta_grads[i] = gt;
            bias_grads[i] = lg.b;
            g = if i > 0 {
                ops::elu_backward(&trace.pre[i - 1], self.alpha, &lg.x)?
            } else {
                lg.x
            };
        }
        Ok(TransformerGrads {
            theta: theta_grads,
            bias: bias_grads,
            input: g.into_vec(),
        })
    }

    /// Flattened parameters in layer order: `theta₀, bias₀, theta₁, ...`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.theta.value.as_slice());
            out.extend_from_slice(l.bias.value.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension(format!(
                "expected {} transformer parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for m in [&mut l.theta.value, &mut l.bias.value] {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&params[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }
}

impl TransformerGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (t, b) in self.theta.iter().zip(&self.bias) {
            out.extend_from_slice(t.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}
