//! Finite-difference verification of the backward kernels.
//!
//! Every check runs the kernels in `f64`: the analytic gradient comes from the
//! backward kernel and is compared against central differences of the forward
//! kernel on randomly drawn small tensors (all spatial dims at most 6).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{self, ConvParams, NormParams};
use crate::tensor::{Dims, Tensor};

/// Central difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpId {
    Conv2d,
    Conv2dStride2,
    Conv2dTranspose,
    InstanceNorm,
    Relu,
    Tanh,
    BilinearResize,
    L1Loss,
    ClampedL1Loss,
    SoftmaxCrossEntropy,
}

impl OpId {
    pub const ALL: [OpId; 10] = [
        OpId::Conv2d,
        OpId::Conv2dStride2,
        OpId::Conv2dTranspose,
        OpId::InstanceNorm,
        OpId::Relu,
        OpId::Tanh,
        OpId::BilinearResize,
        OpId::L1Loss,
        OpId::ClampedL1Loss,
        OpId::SoftmaxCrossEntropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpId::Conv2d => "conv2d",
            OpId::Conv2dStride2 => "conv2d_stride2",
            OpId::Conv2dTranspose => "conv2d_transpose",
            OpId::InstanceNorm => "instance_norm",
            OpId::Relu => "relu",
            OpId::Tanh => "tanh",
            OpId::BilinearResize => "bilinear_resize",
            OpId::L1Loss => "l1_loss",
            OpId::ClampedL1Loss => "clamped_l1_loss",
            OpId::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub op: OpId,
    pub trials: usize,
    pub tolerance: f64,
    /// Largest relative error over all trials and checked tensors.
    pub max_rel_error: f64,
    /// Number of parameter tensors checked per trial (0 for parameter-free ops).
    pub param_tensors: usize,
    pub passed: bool,
    /// Set when a kernel returned an error instead of a gradient.
    pub failure: Option<String>,
}

/// One randomized case: the differentiable inputs (input first, then any
/// parameters), the scalar objective and its analytic gradient.
struct Case {
    inputs: Vec<Tensor<f64>>,
    objective: Objective,
    gradient: Gradient,
}

type Objective = Box<dyn Fn(&[Tensor<f64>]) -> Result<f64>>;
type Gradient = Box<dyn Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>>;

fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..dims.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(dims, data).expect("length matches dims")
}

/// Values bounded away from zero so a finite difference never straddles a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: Dims, margin: f64) -> Tensor<f64> {
    let data = (0..dims.len())
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(dims, data).expect("length matches dims")
}

fn vector(t: &Tensor<f64>) -> Vec<f64> {
    t.data().to_vec()
}

fn as_tensor(v: Vec<f64>) -> Tensor<f64> {
    let n = v.len();
    Tensor::from_vec(Dims::new(1, 1, 1, n), v).expect("length matches dims")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn conv_case(rng: &mut ChaCha8Rng, stride: usize) -> Case {
    let size = if rng.gen_bool(0.5) { 3 } else { 1 };
    let dims = Dims::new(
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=6),
        rng.gen_range(1..=6),
    );
    let oc = rng.gen_range(1..=3);
    let x = random_tensor(rng, dims, -1.0, 1.0);
    let k = random_tensor(rng, Dims::new(oc, dims.c, size, size), -1.0, 1.0);
    let b = random_tensor(rng, Dims::new(1, 1, 1, oc), -1.0, 1.0);
    let params = move |t: &[Tensor<f64>]| ConvParams::new(t[1].clone(), vector(&t[2]), stride);
    let probe = ops::conv2d(&x, &params(&[x.clone(), k.clone(), b.clone()]).unwrap()).unwrap();
    let up = random_tensor(rng, probe.dims(), -1.0, 1.0);
    let up2 = up.clone();
    Case {
        inputs: vec![x, k, b],
        objective: Box::new(move |t| Ok(dot(&ops::conv2d(&t[0], &params(t)?)?, &up))),
        gradient: Box::new(move |t| {
            let g = ops::conv2d_backward(&t[0], &params(t)?, &up2)?;
            Ok(vec![g.dx, g.dkernel, as_tensor(g.dbias)])
        }),
    }
}

fn conv_transpose_case(rng: &mut ChaCha8Rng) -> Case {
    let dims = Dims::new(
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    );
    let oc = rng.gen_range(1..=3);
    let x = random_tensor(rng, dims, -1.0, 1.0);
    let k = random_tensor(rng, Dims::new(oc, dims.c, 3, 3), -1.0, 1.0);
    let b = random_tensor(rng, Dims::new(1, 1, 1, oc), -1.0, 1.0);
    let up = random_tensor(
        rng,
        Dims::new(dims.n, oc, 2 * dims.h, 2 * dims.w),
        -1.0,
        1.0,
    );
    let up2 = up.clone();
    let params = |t: &[Tensor<f64>]| ConvParams::new(t[1].clone(), vector(&t[2]), 2);
    Case {
        inputs: vec![x, k, b],
        objective: Box::new(move |t| Ok(dot(&ops::conv2d_transpose(&t[0], &params(t)?)?, &up))),
        gradient: Box::new(move |t| {
            let g = ops::conv2d_transpose_backward(&t[0], &params(t)?, &up2)?;
            Ok(vec![g.dx, g.dkernel, as_tensor(g.dbias)])
        }),
    }
}

fn norm_case(rng: &mut ChaCha8Rng) -> Case {
    // At least two pixels with spread so the variance is well conditioned.
    let dims = Dims::new(
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(2..=6),
        rng.gen_range(2..=6),
    );
    let x = random_tensor(rng, dims, -2.0, 2.0);
    let gamma = random_tensor(rng, Dims::new(1, 1, 1, dims.c), 0.5, 1.5);
    let beta = random_tensor(rng, Dims::new(1, 1, 1, dims.c), -1.0, 1.0);
    let up = random_tensor(rng, dims, -1.0, 1.0);
    let up2 = up.clone();
    let params = |t: &[Tensor<f64>]| NormParams::new(vector(&t[1]), vector(&t[2]));
    Case {
        inputs: vec![x, gamma, beta],
        objective: Box::new(move |t| Ok(dot(&ops::instance_norm(&t[0], &params(t))?, &up))),
        gradient: Box::new(move |t| {
            let g = ops::instance_norm_backward(&t[0], &params(t), &up2)?;
            Ok(vec![g.dx, as_tensor(g.dgamma), as_tensor(g.dbeta)])
        }),
    }
}

fn small_dims(rng: &mut ChaCha8Rng) -> Dims {
    Dims::new(
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=6),
        rng.gen_range(1..=6),
    )
}

fn relu_case(rng: &mut ChaCha8Rng) -> Case {
    let dims = small_dims(rng);
    let x = away_from_zero(rng, dims, 0.05);
    let up = random_tensor(rng, dims, -1.0, 1.0);
    let up2 = up.clone();
    Case {
        inputs: vec![x],
        objective: Box::new(move |t| Ok(dot(&ops::relu(&t[0])?, &up))),
        gradient: Box::new(move |t| Ok(vec![ops::relu_backward(&t[0], &up2)?])),
    }
}

fn tanh_case(rng: &mut ChaCha8Rng) -> Case {
    let dims = small_dims(rng);
    let x = random_tensor(rng, dims, -2.0, 2.0);
    let up = random_tensor(rng, dims, -1.0, 1.0);
    let up2 = up.clone();
    Case {
        inputs: vec![x],
        objective: Box::new(move |t| Ok(dot(&ops::tanh_act(&t[0])?, &up))),
        gradient: Box::new(move |t| {
            let y = ops::tanh_act(&t[0])?;
            Ok(vec![ops::tanh_backward(&y, &up2)?])
        }),
    }
}

fn resize_case(rng: &mut ChaCha8Rng) -> Case {
    let dims = small_dims(rng);
    let (oh, ow) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
    let x = random_tensor(rng, dims, -1.0, 1.0);
    let up = random_tensor(rng, Dims::new(dims.n, dims.c, oh, ow), -1.0, 1.0);
    let up2 = up.clone();
    Case {
        inputs: vec![x],
        objective: Box::new(move |t| Ok(dot(&ops::bilinear_resize(&t[0], oh, ow)?, &up))),
        gradient: Box::new(move |t| Ok(vec![ops::bilinear_resize_backward(t[0].dims(), &up2)?])),
    }
}

fn l1_case(rng: &mut ChaCha8Rng, clamped: bool) -> Case {
    let dims = small_dims(rng);
    let target = random_tensor(rng, dims, -1.0, 1.0);
    let offset = away_from_zero(rng, dims, 0.05);
    let mut pred = target.clone();
    pred.add_assign(&offset).expect("same dims");
    if clamped {
        // Keep every prediction clear of the clamp boundaries at +-1.
        for v in pred.data_mut() {
            if (v.abs() - 1.0).abs() < 0.05 {
                *v *= 0.9;
            }
        }
    }
    let t2 = target.clone();
    let loss = move |p: &Tensor<f64>, t: &Tensor<f64>| {
        if clamped {
            ops::clamped_l1_loss(p, t)
        } else {
            ops::l1_loss(p, t)
        }
    };
    Case {
        inputs: vec![pred],
        objective: Box::new(move |t| Ok(loss(&t[0], &target)?.loss)),
        gradient: Box::new(move |t| Ok(vec![loss(&t[0], &t2)?.grad])),
    }
}

fn xent_case(rng: &mut ChaCha8Rng) -> Case {
    let d = small_dims(rng);
    let dims = Dims::new(d.n, rng.gen_range(2..=5), d.h, d.w);
    let logits = random_tensor(rng, dims, -2.0, 2.0);
    let labels: Vec<u8> = (0..dims.n * dims.plane())
        .map(|_| rng.gen_range(0..dims.c) as u8)
        .collect();
    let l2 = labels.clone();
    Case {
        inputs: vec![logits],
        objective: Box::new(move |t| Ok(ops::softmax_cross_entropy(&t[0], &labels)?.loss)),
        gradient: Box::new(move |t| Ok(vec![ops::softmax_cross_entropy(&t[0], &l2)?.grad])),
    }
}

fn build_case(op: OpId, rng: &mut ChaCha8Rng) -> Case {
    match op {
        OpId::Conv2d => conv_case(rng, 1),
        OpId::Conv2dStride2 => conv_case(rng, 2),
        OpId::Conv2dTranspose => conv_transpose_case(rng),
        OpId::InstanceNorm => norm_case(rng),
        OpId::Relu => relu_case(rng),
        OpId::Tanh => tanh_case(rng),
        OpId::BilinearResize => resize_case(rng),
        OpId::L1Loss => l1_case(rng, false),
        OpId::ClampedL1Loss => l1_case(rng, true),
        OpId::SoftmaxCrossEntropy => xent_case(rng),
    }
}

/// Relative error between two gradient tensors, `max|a - b| / max(max|a|, max|b|)`.
///
/// Two all-zero tensors compare equal.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic.max_abs().max(numeric.max_abs());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `objective` with respect to `inputs[which]`.
fn numeric_gradient(
    objective: &dyn Fn(&[Tensor<f64>]) -> Result<f64>,
    inputs: &[Tensor<f64>],
    which: usize,
    step: f64,
) -> Result<Tensor<f64>> {
    let mut work = inputs.to_vec();
    let mut grad = Tensor::zeros(inputs[which].dims());
    for i in 0..inputs[which].len() {
        let orig = inputs[which].data()[i];
        work[which].data_mut()[i] = orig + step;
        let plus = objective(&work)?;
        work[which].data_mut()[i] = orig - step;
        let minus = objective(&work)?;
        work[which].data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

fn run_trial(op: OpId, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
    let case = build_case(op, rng);
    let analytic = (case.gradient)(&case.inputs)?;
    let mut worst: f64 = 0.0;
    for (which, a) in analytic.iter().enumerate() {
        let n = numeric_gradient(case.objective.as_ref(), &case.inputs, which, FD_STEP)?;
        worst = worst.max(relative_error(a, &n));
    }
    Ok((worst, case.inputs.len() - 1))
}

/// Runs `trials` randomized finite-difference comparisons for `op`.
///
/// Kernel failures are reported in the result rather than returned.
pub fn gradient_check(op: OpId, trials: usize, tolerance: f64) -> GradReport {
    gradient_check_seeded(op, trials, tolerance, 0x5eed_0000 + op as u64)
}

pub fn gradient_check_seeded(op: OpId, trials: usize, tolerance: f64, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        op,
        trials,
        tolerance,
        max_rel_error: 0.0,
        param_tensors: 0,
        passed: true,
        failure: None,
    };
    for _ in 0..trials {
        match run_trial(op, &mut rng) {
            Ok((err, params)) => {
                report.max_rel_error = report.max_rel_error.max(err);
                report.param_tensors = params;
            }
            Err(e) => {
                report.failure = Some(e.to_string());
                report.passed = false;
                return report;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_ten_trials() {
        for op in OpId::ALL {
            let r = gradient_check(op, 10, 1e-4);
            assert!(r.passed, "{op}: {r:?}");
        }
    }

    #[test]
    fn relu_has_no_parameters() {
        let r = gradient_check(OpId::Relu, 3, 1e-4);
        assert!(r.passed);
        assert_eq!(r.param_tensors, 0);
    }

    #[test]
    fn conv_kernel_gradient_on_single_channel_three_by_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, Dims::new(1, 1, 3, 3), -1.0, 1.0);
        let k = random_tensor(&mut rng, Dims::new(1, 1, 3, 3), -1.0, 1.0);
        let up = random_tensor(&mut rng, Dims::new(1, 1, 3, 3), -1.0, 1.0);
        let objective = |t: &[Tensor<f64>]| -> Result<f64> {
            let p = ConvParams::new(t[1].clone(), vec![0.0], 1)?;
            Ok(dot(&ops::conv2d(&t[0], &p)?, &up))
        };
        let inputs = vec![x.clone(), k.clone()];
        let numeric = numeric_gradient(&objective, &inputs, 1, FD_STEP).unwrap();
        let p = ConvParams::new(k, vec![0.0], 1).unwrap();
        let analytic = ops::conv2d_backward(&x, &p, &up).unwrap().dkernel;
        assert!(relative_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        let a = as_tensor(vec![1.0, 2.0]);
        let b = as_tensor(vec![1.0, 2.1]);
        assert!(relative_error(&a, &b) > 1e-2);
        assert_eq!(
            relative_error(&as_tensor(vec![0.0]), &as_tensor(vec![0.0])),
            0.0
        );
    }
}
