//! Dataset-shared quality regressor.
//!
//! A `c×l` feature map is pooled to `F·Fᵀ`, flattened to `c²` values and
//! passed through `fc1 → ReLU → fc2 → ReLU → fc_out`, producing one scalar
//! perceptual quality per image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::ops::{self, bilinear_pool, bilinear_pool_backward, relu, relu_backward};
use crate::diffcore::{DualBuffer, Matrix};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const DEFAULT_HIDDEN1: usize = 128;
pub const DEFAULT_HIDDEN2: usize = 64;

const SIGNED_SQRT_OFFSET: f64 = 1e-8;
const L2_NORM_FLOOR: f64 = 1e-12;

/// Optional post-pooling normalization. The default leaves `F·Fᵀ` as is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolNormalization {
    #[default]
    None,
    /// Element-wise signed square root followed by L2 normalization.
    SignedSqrtL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub channels: usize,
    #[serde(default = "default_hidden1")]
    pub hidden1: usize,
    #[serde(default = "default_hidden2")]
    pub hidden2: usize,
    #[serde(default)]
    pub normalization: PoolNormalization,
}

fn default_hidden1() -> usize {
    DEFAULT_HIDDEN1
}

fn default_hidden2() -> usize {
    DEFAULT_HIDDEN2
}

impl RegressorConfig {
    pub fn new(channels: usize) -> Self {
        RegressorConfig {
            channels,
            hidden1: DEFAULT_HIDDEN1,
            hidden2: DEFAULT_HIDDEN2,
            normalization: PoolNormalization::None,
        }
    }

    pub fn layer_shapes(&self) -> [(usize, usize); 3] {
        [
            (self.channels * self.channels, self.hidden1),
            (self.hidden1, self.hidden2),
            (self.hidden2, 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DualBuffer,
    pub bias: DualBuffer,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Dense {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            weight: DualBuffer::new(Matrix::from_vec(fan_in, fan_out, data).expect("sized")),
            bias: DualBuffer::new(Matrix::zeros(1, fan_out)),
        }
    }

    pub fn from_parts(weight: Matrix, bias: Matrix) -> Result<Dense> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Dimension(format!(
                "dense weight {} does not match bias {}",
                weight.shape_str(),
                bias.shape_str()
            )));
        }
        Ok(Dense {
            weight: DualBuffer::new(weight),
            bias: DualBuffer::new(bias),
        })
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        ops::linear_forward(x, &self.weight.value, &self.bias.value)
    }
}

/// Gradients for the three dense layers, plus the gradient with respect to
/// the raw feature map when computed for a single sample.
struct UpperGrads {
    trace: HeadTrace,
    g_z1: Matrix,
    fc2: ops::LinearGrads,
    fc3: ops::LinearGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: [Matrix; 3],
    pub biases: [Matrix; 3],
    pub features: Option<Matrix>,
}

impl HeadGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorHead {
    config: RegressorConfig,
    layers: [Dense; 3],
}

struct HeadTrace {
    flat_raw: Matrix,
    flat: Matrix,
    norm: Option<NormTrace>,
    z1: Matrix,
    h1: Matrix,
    z2: Matrix,
    h2: Matrix,
}

struct NormTrace {
    signed: Matrix,
    length: f64,
}

impl RegressorHead {
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.hidden1 == 0 || config.hidden2 == 0 {
            return Err(Error::Config(format!(
                "regressor sizes must be positive: {config:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_shapes()
            .map(|(fan_in, fan_out)| Dense::glorot(fan_in, fan_out, &mut rng));
        Ok(RegressorHead { config, layers })
    }

    pub fn from_layers(config: RegressorConfig, layers: [Dense; 3]) -> Result<Self> {
        for (i, (layer, (fan_in, fan_out))) in layers.iter().zip(config.layer_shapes()).enumerate()
        {
            if layer.weight.value.shape() != (fan_in, fan_out) {
                return Err(Error::Dimension(format!(
                    "regressor layer {i}: expected {fan_in}×{fan_out}, got {}",
                    layer.weight.value.shape_str()
                )));
            }
        }
        Ok(RegressorHead { config, layers })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense; 3] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.value.len() + l.bias.value.len())
            .sum()
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.rows() != self.config.channels || features.cols() == 0 {
            return Err(Error::Dimension(format!(
                "feature map {} does not match the regressor's {} channels",
                features.shape_str(),
                self.config.channels
            )));
        }
        Ok(())
    }

    fn normalize(&self, flat_raw: &Matrix) -> (Matrix, Option<NormTrace>) {
        match self.config.normalization {
            PoolNormalization::None => (flat_raw.clone(), None),
            PoolNormalization::SignedSqrtL2 => {
                let root = SIGNED_SQRT_OFFSET.sqrt();
                let signed =
                    flat_raw.map(|x| x.signum() * ((x.abs() + SIGNED_SQRT_OFFSET).sqrt() - root));
                let length = signed
                    .as_slice()
                    .iter()
                    .map(|s| s * s)
                    .sum::<f64>()
                    .sqrt()
                    .max(L2_NORM_FLOOR);
                let out = signed.map(|s| s / length);
                (out, Some(NormTrace { signed, length }))
            }
        }
    }

    fn trace_pooled(&self, pooled: &Matrix) -> Result<(HeadTrace, f64)> {
        let flat_raw = pooled.flatten();
        let (flat, norm) = self.normalize(&flat_raw);
        let z1 = self.layers[0].forward(&flat)?;
        let h1 = relu(&z1);
        let z2 = self.layers[1].forward(&h1)?;
        let h2 = relu(&z2);
        let out = self.layers[2].forward(&h2)?.get(0, 0);
        Ok((
            HeadTrace {
                flat_raw,
                flat,
                norm,
                z1,
                h1,
                z2,
                h2,
            },
            out,
        ))
    }

    /// Perceptual quality of one `c×l` feature map.
    pub fn forward(&self, features: &Matrix) -> Result<f64> {
        self.check_features(features)?;
        self.forward_pooled(&bilinear_pool(features)?)
    }

    /// Perceptual quality from an already pooled `c×c` matrix.
    pub fn forward_pooled(&self, pooled: &Matrix) -> Result<f64> {
        let c = self.config.channels;
        if pooled.shape() != (c, c) {
            return Err(Error::Dimension(format!(
                "pooled input {} does not match the regressor's {c}×{c}",
                pooled.shape_str()
            )));
        }
        Ok(self.trace_pooled(pooled)?.1)
    }

    pub fn forward_batch(&self, features: &[&Matrix]) -> Result<Vec<f64>> {
        self.forward_batch_in(Execution::default(), features)
    }

    pub fn forward_batch_in(&self, exec: Execution, features: &[&Matrix]) -> Result<Vec<f64>> {
        exec.try_map(features, |f| self.forward(f))
    }

    /// Smallest |pre-activation| over both ReLU layers. Finite-difference
    /// checks are only meaningful when this is well above the step size.
    pub fn min_abs_preactivation(&self, features: &Matrix) -> Result<f64> {
        self.check_features(features)?;
        let (t, _) = self.trace_pooled(&bilinear_pool(features)?)?;
        Ok(t.z1
            .as_slice()
            .iter()
            .chain(t.z2.as_slice())
            .fold(f64::INFINITY, |m, z| m.min(z.abs())))
    }

    /// Gradients of `upstream · forward(features)`, including the feature
    /// gradient.
    pub fn backward(&self, features: &Matrix, upstream: f64) -> Result<HeadGrads> {
        let p = self.backward_upper(features, upstream)?;
        let (t, g_z1) = (&p.trace, &p.g_z1);
        let l1 = ops::linear_backward(&t.flat, &self.layers[0].weight.value, g_z1)?;

        let g_flat_raw = match &t.norm {
            None => l1.x,
            Some(n) => {
                let y = &t.flat;
                let dot: f64 = y
                    .as_slice()
                    .iter()
                    .zip(l1.x.as_slice())
                    .map(|(a, b)| a * b)
                    .sum();
                let data =
                    l1.x.as_slice()
                        .iter()
                        .zip(y.as_slice())
                        .zip(t.flat_raw.as_slice())
                        .zip(n.signed.as_slice())
                        .map(|(((&gy, &yi), &xi), _)| {
                            let gs = (gy - yi * dot) / n.length;
                            gs * 0.5 / (xi.abs() + SIGNED_SQRT_OFFSET).sqrt()
                        })
                        .collect();
                Matrix::from_vec(1, y.cols(), data)?
            }
        };
        let c = self.config.channels;
        let g_pooled = g_flat_raw.reshape(c, c)?;
        let g_features = bilinear_pool_backward(features, &g_pooled)?;
        Ok(HeadGrads {
            weights: [l1.w, p.fc2.w, p.fc3.w],
            biases: [l1.b, p.fc2.b, p.fc3.b],
            features: Some(g_features),
        })
    }

    /// Backward pass down to the fc1 pre-activation. The fc1 parameter
    /// gradient is left to the caller so batches can form it in one product.
    fn backward_upper(&self, features: &Matrix, upstream: f64) -> Result<UpperGrads> {
        self.check_features(features)?;
        let pooled = bilinear_pool(features)?;
        let (trace, _) = self.trace_pooled(&pooled)?;
        let g_out = Matrix::from_rows(&[[upstream]]);
        let fc3 = ops::linear_backward(&trace.h2, &self.layers[2].weight.value, &g_out)?;
        let g_z2 = relu_backward(&trace.z2, &fc3.x)?;
        let fc2 = ops::linear_backward(&trace.h1, &self.layers[1].weight.value, &g_z2)?;
        let g_z1 = relu_backward(&trace.z1, &fc2.x)?;
        Ok(UpperGrads {
            trace,
            g_z1,
            fc2,
            fc3,
        })
    }

    pub fn zero_grads(&self) -> HeadGrads {
        HeadGrads {
            weights: self
                .layers
                .each_ref()
                .map(|l| Matrix::zeros(l.weight.value.rows(), l.weight.value.cols())),
            biases: self
                .layers
                .each_ref()
                .map(|l| Matrix::zeros(1, l.bias.value.cols())),
            features: None,
        }
    }

    /// Parameter gradients of `Σᵢ upstream[i]·forward(features[i])`.
    ///
    /// Per-sample passes may run in parallel. Their results are combined in
    /// index order, so the sum does not depend on `exec`. The fc1 weight
    /// gradient is the single product `Xᵀ·G` of the stacked pooled inputs
    /// and fc1 upstream rows.
    pub fn batch_backward_in(
        &self,
        exec: Execution,
        features: &[&Matrix],
        upstream: &[f64],
    ) -> Result<HeadGrads> {
        if features.len() != upstream.len() {
            return Err(Error::Dimension(format!(
                "{} feature maps but {} upstream gradients",
                features.len(),
                upstream.len()
            )));
        }
        let per_sample = exec.try_map_range(features.len(), |i| {
            self.backward_upper(features[i], upstream[i])
        })?;
        let mut total = self.zero_grads();
        let n = per_sample.len();
        if n == 0 {
            return Ok(total);
        }
        let width = per_sample[0].trace.flat.cols();
        let hidden = per_sample[0].g_z1.cols();
        let mut x = Vec::with_capacity(n * width);
        let mut g = Vec::with_capacity(n * hidden);
        for p in &per_sample {
            x.extend_from_slice(p.trace.flat.as_slice());
            g.extend_from_slice(p.g_z1.as_slice());
            for (i, l) in [(1, &p.fc2), (2, &p.fc3)] {
                total.weights[i].add_assign(&l.w)?;
                total.biases[i].add_assign(&l.b)?;
            }
        }
        let (w1, b1) = ops::linear_backward_params(
            &Matrix::from_vec(n, width, x)?,
            &Matrix::from_vec(n, hidden, g)?,
        )?;
        total.weights[0] = w1;
        total.biases[0] = b1;
        Ok(total)
    }

    pub fn batch_backward(&self, features: &[&Matrix], upstream: &[f64]) -> Result<HeadGrads> {
        self.batch_backward_in(Execution::default(), features, upstream)
    }

    /// Flattened parameters in layer order: `w₁, b₁, w₂, b₂, w₃, b₃`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.value.as_slice());
            out.extend_from_slice(l.bias.value.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension(format!(
                "expected {} regressor parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for m in [&mut l.weight.value, &mut l.bias.value] {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&params[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }
}
