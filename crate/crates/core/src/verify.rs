//! Sampling and finite-difference suites behind the `check` command and
//! the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::gradcheck::{finite_diff_check, GradCheckReport, DEFAULT_STEP};
use crate::diffcore::ops;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, combined_loss_grad, nin_grad, nin_loss, smooth_l1, smooth_l1_grad,
};
use crate::monotone::{MonotonicTransformer, TransformerOptions};
use crate::par::Execution;
use crate::regressor::{RegressorConfig, RegressorHead};
use crate::train::{batch_gradients, widths_for_depth, QualityModel};

/// Input interval of the monotonicity sampling suite.
pub const SAMPLE_RANGE: (f64, f64) = (-5.0, 5.0);
/// Tolerance of the gradient suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// A pair of sorted inputs whose outputs are not strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub transformer: String,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub transformers: usize,
    pub inputs_per_transformer: usize,
    /// Smallest `y[i+1] − y[i]` over all sorted input pairs.
    pub min_gap: f64,
    /// Smallest analytic input derivative over all sampled points.
    pub min_input_grad: f64,
    pub min_effective_weight: f64,
    pub violations: Vec<MonotonicityViolation>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.min_gap > 0.0 && self.min_input_grad > 0.0
    }

    fn merge(label_count: usize, n_inputs: usize, parts: Vec<MonotonicityReport>) -> Self {
        let mut out = MonotonicityReport {
            transformers: label_count,
            inputs_per_transformer: n_inputs,
            min_gap: f64::INFINITY,
            min_input_grad: f64::INFINITY,
            min_effective_weight: f64::INFINITY,
            violations: Vec::new(),
        };
        for p in parts {
            out.min_gap = out.min_gap.min(p.min_gap);
            out.min_input_grad = out.min_input_grad.min(p.min_input_grad);
            out.min_effective_weight = out.min_effective_weight.min(p.min_effective_weight);
            out.violations.extend(p.violations);
        }
        out
    }
}

/// `n` strictly increasing random points in `[lo, hi]`: one uniform draw
/// from the middle half of each of `n` equal strata, so neighbours are at
/// least `(hi − lo)/(2n)` apart. Much closer pairs deep in ELU saturation
/// would differ by less than one ulp of the output.
pub fn sorted_inputs(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    let width = (hi - lo) / n as f64;
    (0..n)
        .map(|i| lo + width * (i as f64 + 0.25 + 0.5 * rng.random::<f64>()))
        .collect()
}

/// Evaluates `t` on sorted `inputs` and records every non-increasing pair.
pub fn check_transformer(
    t: &MonotonicTransformer,
    label: &str,
    inputs: &[f64],
) -> Result<MonotonicityReport> {
    let ys = t.forward(inputs)?;
    let mut report = MonotonicityReport {
        transformers: 1,
        inputs_per_transformer: inputs.len(),
        min_gap: f64::INFINITY,
        min_input_grad: f64::INFINITY,
        min_effective_weight: t.min_effective_weight(),
        violations: Vec::new(),
    };
    for i in 1..inputs.len() {
        let gap = ys[i] - ys[i - 1];
        report.min_gap = report.min_gap.min(gap);
        if !(gap > 0.0) {
            report.violations.push(MonotonicityViolation {
                transformer: label.to_string(),
                x: [inputs[i - 1], inputs[i]],
                y: [ys[i - 1], ys[i]],
            });
        }
    }
    for &x in inputs {
        report.min_input_grad = report.min_input_grad.min(t.grad_input(x)?);
    }
    Ok(report)
}

/// Seeded random transformer: default initialization plus small random
/// biases so the bias path is exercised too.
pub fn random_transformer(depth: usize, seed: u64) -> Result<MonotonicTransformer> {
    let opts = TransformerOptions {
        allow_any_depth: true,
        ..Default::default()
    };
    let mut t = MonotonicTransformer::with_options(&widths_for_depth(depth), seed, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b1a5);
    for layer in t.layers_mut() {
        for b in layer.bias.value.as_mut_slice() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    Ok(t)
}

/// `per_depth` random transformers for each depth, each checked on its own
/// `n_inputs` sorted points in [`SAMPLE_RANGE`].
pub fn monotonicity_suite(
    exec: Execution,
    depths: &[usize],
    per_depth: usize,
    n_inputs: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    let jobs: Vec<(usize, u64)> = depths
        .iter()
        .flat_map(|&d| (0..per_depth as u64).map(move |k| (d, k)))
        .collect();
    let parts = exec.try_map(&jobs, |&(depth, k)| {
        let s = seed
            .wrapping_add((depth as u64) << 32)
            .wrapping_add(k.wrapping_mul(0x9e37_79b9));
        let t = random_transformer(depth, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.rotate_left(7));
        let xs = sorted_inputs(n_inputs, SAMPLE_RANGE.0, SAMPLE_RANGE.1, &mut rng);
        check_transformer(&t, &format!("random depth {depth} #{k} (seed {s})"), &xs)
    })?;
    Ok(MonotonicityReport::merge(jobs.len(), n_inputs, parts))
}

/// Runs the sampling check on every transformer of `model` over `range`.
pub fn check_model_transformers(
    model: &QualityModel,
    n_inputs: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<MonotonicityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = sorted_inputs(n_inputs, range.0, range.1, &mut rng);
    let parts = model
        .transformers
        .iter()
        .map(|(id, t)| check_transformer(t, id, &xs))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonotonicityReport::merge(parts.len(), n_inputs, parts))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCase {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientSuiteReport {
    pub cases: Vec<GradientCase>,
}

impl GradientSuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.report.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradientCase> {
        self.cases.iter().filter(|c| !c.report.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.report.max_rel_error)
            .fold(0.0, f64::max)
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn uniform_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

fn check(
    f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
) -> Result<GradCheckReport> {
    finite_diff_check(f, params, analytic, DEFAULT_STEP, GRAD_TOLERANCE)
}

fn split3(
    p: &[f64],
    a: (usize, usize),
    b: (usize, usize),
    c: (usize, usize),
) -> (Matrix, Matrix, Matrix) {
    let n1 = a.0 * a.1;
    let n2 = b.0 * b.1;
    (
        Matrix::from_vec(a.0, a.1, p[..n1].to_vec()).expect("sized"),
        Matrix::from_vec(b.0, b.1, p[n1..n1 + n2].to_vec()).expect("sized"),
        Matrix::from_vec(c.0, c.1, p[n1 + n2..].to_vec()).expect("sized"),
    )
}

fn linear_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (x, w, b) = (uniform(3, 4, rng), uniform(4, 2, rng), uniform(1, 2, rng));
    let g = uniform(3, 2, rng);
    let grads = ops::linear_backward(&x, &w, &g)?;
    let params: Vec<f64> = [x.as_slice(), w.as_slice(), b.as_slice()].concat();
    let analytic = [grads.x.as_slice(), grads.w.as_slice(), grads.b.as_slice()].concat();
    check(
        |p| {
            let (x, w, b) = split3(p, (3, 4), (4, 2), (1, 2));
            dot(&ops::linear_forward(&x, &w, &b).expect("shapes"), &g)
        },
        &params,
        &analytic,
    )
}

fn elu_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = uniform(3, 4, rng);
    let g = uniform(3, 4, rng);
    let analytic = ops::elu_backward(&x, 1.0, &g)?;
    check(
        |p| {
            let x = Matrix::from_vec(3, 4, p.to_vec()).expect("sized");
            dot(&ops::elu(&x, 1.0).expect("alpha"), &g)
        },
        x.as_slice(),
        analytic.as_slice(),
    )
}

fn relu_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = uniform(3, 4, rng).map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
    let g = uniform(3, 4, rng);
    let analytic = ops::relu_backward(&x, &g)?;
    check(
        |p| {
            dot(
                &ops::relu(&Matrix::from_vec(3, 4, p.to_vec()).expect("sized")),
                &g,
            )
        },
        x.as_slice(),
        analytic.as_slice(),
    )
}

fn pool_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let f = uniform(3, 4, rng);
    let g = uniform(3, 3, rng);
    let analytic = ops::bilinear_pool_backward(&f, &g)?;
    check(
        |p| {
            dot(
                &ops::bilinear_pool(&Matrix::from_vec(3, 4, p.to_vec()).expect("sized"))
                    .expect("non-empty"),
                &g,
            )
        },
        f.as_slice(),
        analytic.as_slice(),
    )
}

fn transformer_param_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let t = random_transformer(5, rng.random())?;
    transformer_params_check(&t, rng)
}

/// Parameter and input gradients of `t` on eight inputs in [−2, 2].
fn transformer_params_check(
    t: &MonotonicTransformer,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    let qp = uniform_vec(8, rng);
    // Outputs reach the thousands; scaling the upstream keeps the objective
    // O(1) so central-difference round-off stays below the tolerance.
    let scale = t.forward(&qp)?.iter().fold(1.0, |m: f64, y| m.max(y.abs()));
    let up: Vec<f64> = uniform_vec(8, rng).iter().map(|u| u / scale).collect();
    let grads = t.backward(&qp, &up)?;
    let n = t.parameter_count();
    let mut probe = t.clone();
    let mut params = t.flat_params();
    params.extend_from_slice(&qp);
    let mut analytic = grads.flat();
    analytic.extend_from_slice(&grads.input);
    check(
        |p| {
            probe.set_flat_params(&p[..n]).expect("sized");
            let y = probe.forward(&p[n..]).expect("finite");
            y.iter().zip(&up).map(|(a, b)| a * b).sum()
        },
        &params,
        &analytic,
    )
}

fn transformer_input_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let t = random_transformer(5, rng.random())?;
    let x = rng.random_range(-2.0..2.0);
    let analytic = t.grad_input(x)?;
    check(|p| t.forward_scalar(p[0]), &[x], &[analytic])
}

fn small_regressor(rng: &mut ChaCha8Rng) -> Result<RegressorHead> {
    let config = RegressorConfig {
        channels: 3,
        hidden1: 6,
        hidden2: 4,
        ..RegressorConfig::new(3)
    };
    let mut head = RegressorHead::new(config, rng.random())?;
    // Nonzero biases move the ReLU kinks away from the origin.
    for layer in head.layers_mut() {
        for b in layer.bias.value.as_mut_slice() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    Ok(head)
}

/// Features for which no ReLU pre-activation sits within `margin` of 0.
fn kink_free_features(head: &RegressorHead, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let f = uniform(3, 4, rng).map(|v| v * 0.5);
        if head.min_abs_preactivation(&f)? > 1e-3 {
            out.push(f);
        }
    }
    Ok(out)
}

fn regressor_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let head = small_regressor(rng)?;
    let f = kink_free_features(&head, 1, rng)?.remove(0);
    let up = rng.random_range(-2.0..2.0);
    let grads = head.backward(&f, up)?;
    let n = head.parameter_count();
    let mut params = head.flat_params();
    params.extend_from_slice(f.as_slice());
    let mut analytic = grads.flat();
    analytic.extend_from_slice(
        grads
            .features
            .as_ref()
            .expect("feature gradient")
            .as_slice(),
    );
    let mut probe = head.clone();
    check(
        |p| {
            probe.set_flat_params(&p[..n]).expect("sized");
            let f = Matrix::from_vec(3, 4, p[n..].to_vec()).expect("sized");
            up * probe.forward(&f).expect("shapes")
        },
        &params,
        &analytic,
    )
}

/// Prediction/label batch with no residual near the smooth-L1 breakpoint.
fn loss_batch(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let qr = uniform_vec(n, rng);
        let qm = uniform_vec(n, rng);
        if qr
            .iter()
            .zip(&qm)
            .all(|(r, m)| ((r - m).abs() - 1.0).abs() > 1e-3)
        {
            return (qr, qm);
        }
    }
}

fn loss_case(kind: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (qr, qm) = loss_batch(8, rng);
    match kind {
        0 => check(
            |p| smooth_l1(p, &qm).expect("batch"),
            &qr,
            &smooth_l1_grad(&qr, &qm)?,
        ),
        1 => check(
            |p| nin_loss(p, &qm).expect("batch"),
            &qr,
            &nin_grad(&qr, &qm)?,
        ),
        _ => check(
            |p| combined_loss(p, &qm, 1.0).expect("batch").total,
            &qr,
            &combined_loss_grad(&qr, &qm, 1.0)?,
        ),
    }
}

/// Combined loss of a whole small model on one batch, differentiated with
/// respect to every regressor and transformer parameter.
fn end_to_end_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let regressor = small_regressor(rng)?;
    let mut t = random_transformer(3, rng.random())?;
    // Keep the output scale moderate so residuals stay clear of the
    // smooth-L1 breakpoint under the finite-difference probes.
    for layer in t.layers_mut() {
        layer.theta.value = layer.theta.value.map(|v| v - 1.0);
    }
    let mut transformers = std::collections::BTreeMap::new();
    transformers.insert("d".to_string(), t);
    let model = QualityModel {
        regressor,
        transformers,
    };
    let feats = kink_free_features(&model.regressor, 6, rng)?;
    let refs: Vec<&Matrix> = feats.iter().collect();
    let qp = model.predict_batch_in(Execution::Sequential, &refs)?;
    let qr = model.calibrate("d", &qp)?;
    let qm: Vec<f64> = loop {
        let m = uniform_vec(6, rng);
        if qr
            .iter()
            .zip(&m)
            .all(|(r, m)| ((r - m).abs() - 1.0).abs() > 1e-2)
        {
            break m;
        }
    };
    let (_, grads) = batch_gradients(&model, Execution::Sequential, "d", &refs, &qm, 1.0)?;
    let n = model.regressor.parameter_count();
    let mut params = model.regressor.flat_params();
    params.extend(model.transformers["d"].flat_params());
    let mut analytic = grads.regressor.flat();
    analytic.extend_from_slice(&grads.transformers["d"]);
    let mut probe = model.clone();
    check(
        |p| {
            probe.regressor.set_flat_params(&p[..n]).expect("sized");
            let t = probe.transformers.get_mut("d").expect("present");
            t.set_flat_params(&p[n..]).expect("sized");
            let qp = probe
                .predict_batch_in(Execution::Sequential, &refs)
                .expect("shapes");
            let qr = probe.calibrate("d", &qp).expect("finite");
            combined_loss(&qr, &qm, 1.0).expect("batch").total
        },
        &params,
        &analytic,
    )
}

const CASE_KINDS: [&str; 11] = [
    "linear",
    "elu",
    "relu",
    "bilinear_pool",
    "transformer_params",
    "transformer_input",
    "regressor",
    "smooth_l1",
    "nin",
    "combined_loss",
    "end_to_end",
];

/// `trials` random cases of every layer, loss and the end-to-end objective.
pub fn gradient_suite(exec: Execution, trials: usize, seed: u64) -> Result<GradientSuiteReport> {
    let jobs: Vec<(usize, usize)> = (0..CASE_KINDS.len())
        .flat_map(|k| (0..trials).map(move |i| (k, i)))
        .collect();
    let cases = exec.try_map(&jobs, |&(kind, trial)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kind as u64) << 40) ^ trial as u64);
        let report = match kind {
            0 => linear_case(&mut rng),
            1 => elu_case(&mut rng),
            2 => relu_case(&mut rng),
            3 => pool_case(&mut rng),
            4 => transformer_param_case(&mut rng),
            5 => transformer_input_case(&mut rng),
            6 => regressor_case(&mut rng),
            7..=9 => loss_case(kind - 7, &mut rng),
            10 => end_to_end_case(&mut rng),
            _ => Err(Error::Parameter(format!("unknown gradient case {kind}"))),
        }?;
        Ok(GradientCase {
            name: format!("{} #{trial}", CASE_KINDS[kind]),
            report,
        })
    })?;
    Ok(GradientSuiteReport { cases })
}

/// Finite-difference checks of every transformer in `model`: `trials`
/// parameter cases and `trials` input-derivative cases each.
pub fn check_model_gradients(
    model: &QualityModel,
    trials: usize,
    seed: u64,
) -> Result<GradientSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for (id, t) in &model.transformers {
        for trial in 0..trials {
            cases.push(GradientCase {
                name: format!("{id} params #{trial}"),
                report: transformer_params_check(t, &mut rng)?,
            });
            let x = rng.random_range(-2.0..2.0);
            let analytic = t.grad_input(x)?;
            cases.push(GradientCase {
                name: format!("{id} input #{trial}"),
                report: check(|p| t.forward_scalar(p[0]), &[x], &[analytic])?,
            });
        }
    }
    Ok(GradientSuiteReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let m = monotonicity_suite(Execution::default(), &[3, 5, 7], 20, 100, 1).unwrap();
        assert!(m.passed(), "{:?}", m.violations.first());
        assert_eq!(m.transformers, 60);
        let g = gradient_suite(Execution::default(), 2, 1).unwrap();
        assert!(g.passed(), "{:?}", g.failures().next());
        assert_eq!(g.cases.len(), 22);
    }

    #[test]
    fn fresh_model_gradients_pass() {
        let config = crate::train::TrainConfig {
            hidden1: 8,
            hidden2: 4,
            ..Default::default()
        };
        let model = QualityModel::init(3, &["a", "b"], &config).unwrap();
        let r = check_model_gradients(&model, 3, 5).unwrap();
        assert_eq!(r.cases.len(), 12);
        assert!(r.passed(), "{:?}", r.failures().next());
    }

    #[test]
    fn forged_decreasing_pair_is_reported() {
        let t = random_transformer(3, 4).unwrap();
        let r = check_transformer(&t, "t", &[-1.0, 0.0, 1.0]).unwrap();
        assert!(r.passed());
        let r = check_transformer(&t, "t", &[1.0, 0.0]).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].x, [1.0, 0.0]);
        assert!(!r.passed());
    }

    #[test]
    fn sorted_inputs_are_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs = sorted_inputs(100, -5.0, 5.0, &mut rng);
        assert_eq!(xs.len(), 100);
        assert!(xs.windows(2).all(|w| w[1] - w[0] >= 0.05));
        assert!(xs.iter().all(|x| (-5.0..5.0).contains(x)));
    }
}
