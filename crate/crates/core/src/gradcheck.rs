//! Finite-difference verification of tape gradients.
//!
//! Any scalar-valued closure over a set of input tensors can be checked:
//! the analytic gradient from one backward pass is compared elementwise with
//! central differences (f(x+e) - f(x-e)) / 2e in 64-bit arithmetic.

use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Worst-coordinate summary of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Set if either side produced a NaN, with its coordinates.
    pub nan_at: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.nan_at.is_none() && self.max_rel_error <= tolerance
    }
}

/// Checks d(f)/d(inputs) for a scalar-valued `f` against central differences.
///
/// `f` must be a pure function of the tape and inputs (same values in, same
/// value out), which every op in this crate satisfies.
pub fn gradient_check(
    f: &dyn Fn(&mut Tape, &[Tensor]) -> Tensor,
    inputs: &[Tensor],
    epsilon: f64,
) -> GradCheckReport {
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.clone().requires_grad(true)).collect();
    let mut tape = Tape::new();
    let out = f(&mut tape, &leaves);
    assert_eq!(out.numel(), 1, "gradient_check expects a scalar-valued closure");
    let grads = tape.backward(&out);
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| grads.get(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, nan_at: None };
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let eval = |delta: f64| -> f64 {
                let mut probe: Vec<Tensor> = inputs.to_vec();
                let mut data = input.data().to_vec();
                data[j] += delta;
                probe[i] = Tensor::new(data, input.shape());
                let mut tape = Tape::no_grad();
                f(&mut tape, &probe).item()
            };
            let numeric = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
            let a = analytic[i][j];
            if !a.is_finite() || !numeric.is_finite() {
                if report.nan_at.is_none() {
                    report.nan_at = Some((i, j));
                }
                continue;
            }
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report
}

/// One battery item: what was checked, at which tolerance, and the result.
pub struct BatteryEntry {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl BatteryEntry {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

/// Runs the full finite-difference battery: every differentiable op, the OGA
/// block, and the miniature end-to-end model. Deterministic under `seed`.
pub fn battery(seed: u64) -> Vec<BatteryEntry> {
    use crate::model::{Mode, Model, ModelConfig};
    use crate::oga::{OgaBlock, OgaConfig};
    use crate::ops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rand_tensor = |shape: &[usize]| -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape)
    };

    let mut entries = Vec::new();
    let mut check = |name: &'static str,
                     tolerance: f64,
                     inputs: &[Tensor],
                     f: &dyn Fn(&mut Tape, &[Tensor]) -> Tensor| {
        let report = gradient_check(f, inputs, DEFAULT_EPSILON);
        entries.push(BatteryEntry { name, tolerance, report });
    };

    // elementwise / activations (relu probed away from its kink)
    let relu_in = Tensor::new(
        (0..24)
            .map(|i| if i % 2 == 0 { 0.1 + 0.03 * i as f64 } else { -0.1 - 0.03 * i as f64 })
            .collect(),
        &[4, 6],
    );
    check("relu", 1e-6, &[relu_in], &|tape, ins| {
        let y = ops::relu(tape, &ins[0]);
        ops::sum_all(tape, &y)
    });
    let x = rand_tensor(&[3, 5]);
    check("sigmoid", 1e-6, &[x], &|tape, ins| {
        let y = ops::sigmoid(tape, &ins[0]);
        ops::sum_all(tape, &y)
    });
    let x = rand_tensor(&[3, 5]);
    let proj = rand_tensor(&[3, 5]);
    check("softmax", 1e-6, &[x, proj], &|tape, ins| {
        let y = ops::softmax(tape, &ins[0], 1).unwrap();
        ops::dot(tape, &y, &ins[1]).unwrap()
    });
    let (x, w, b) = (rand_tensor(&[3, 4]), rand_tensor(&[4, 2]), rand_tensor(&[2]));
    check("linear", 1e-6, &[x, w, b], &|tape, ins| {
        let y = ops::linear(tape, &ins[0], &ins[1], Some(&ins[2])).unwrap();
        let y = ops::sigmoid(tape, &y);
        ops::sum_all(tape, &y)
    });

    // convolution family
    let (x, w, b, proj) = (
        rand_tensor(&[2, 3, 6, 6]),
        rand_tensor(&[4, 3, 3, 3]),
        rand_tensor(&[4]),
        rand_tensor(&[2, 4, 3, 3]),
    );
    check("conv2d", 1e-6, &[x, w, b, proj], &|tape, ins| {
        let y = ops::conv2d(tape, &ins[0], &ins[1], Some(&ins[2]), 2, 1).unwrap();
        ops::dot(tape, &y, &ins[3]).unwrap()
    });
    let (x, ws, proj) = (
        rand_tensor(&[2, 3, 5, 5]),
        rand_tensor(&[2, 4, 3, 3, 3]),
        rand_tensor(&[2, 4, 5, 5]),
    );
    check("conv2d_per_sample", 1e-6, &[x, ws, proj], &|tape, ins| {
        let y = ops::conv2d_per_sample(tape, &ins[0], &ins[1], None, 1, 1).unwrap();
        ops::dot(tape, &y, &ins[2]).unwrap()
    });
    let (x, w, b, proj) = (
        rand_tensor(&[2, 3, 4, 4]),
        rand_tensor(&[3, 2, 2, 2]),
        rand_tensor(&[2]),
        rand_tensor(&[2, 2, 8, 8]),
    );
    check("transposed_conv2d", 1e-6, &[x, w, b, proj], &|tape, ins| {
        let y = ops::transposed_conv2d(tape, &ins[0], &ins[1], Some(&ins[2]), 2, 0).unwrap();
        ops::dot(tape, &y, &ins[3]).unwrap()
    });

    // pooling / normalization / losses
    let (x, proj) = (rand_tensor(&[2, 3, 6, 6]), rand_tensor(&[2, 3]));
    check("global_avg_pool", 1e-6, &[x, proj], &|tape, ins| {
        let y = ops::global_avg_pool(tape, &ins[0]).unwrap();
        ops::dot(tape, &y, &ins[1]).unwrap()
    });
    let (x, proj) = (rand_tensor(&[2, 3, 6, 6]), rand_tensor(&[2, 3, 3, 3]));
    check("maxpool2d", 1e-6, &[x, proj], &|tape, ins| {
        let y = ops::maxpool2d(tape, &ins[0]).unwrap();
        ops::dot(tape, &y, &ins[1]).unwrap()
    });
    let (x, proj) = (rand_tensor(&[2, 3, 6, 6]), rand_tensor(&[2, 3, 2, 2]));
    check("avg_pool2d", 1e-6, &[x, proj], &|tape, ins| {
        let y = ops::avg_pool2d(tape, &ins[0], 3).unwrap();
        ops::dot(tape, &y, &ins[1]).unwrap()
    });
    let (x, g, b, proj) = (
        rand_tensor(&[3, 4, 5, 5]),
        rand_tensor(&[4]),
        rand_tensor(&[4]),
        rand_tensor(&[3, 4, 5, 5]),
    );
    check("batchnorm2d_train", 1e-5, &[x, g, b, proj], &|tape, ins| {
        let out = ops::batchnorm2d(
            tape,
            &ins[0],
            &ins[1],
            &ins[2],
            &[0.0; 4],
            &[1.0; 4],
            1e-5,
            ops::BatchNormMode::Train,
        )
        .unwrap();
        ops::dot(tape, &out.output, &ins[3]).unwrap()
    });
    let x = rand_tensor(&[4, 6]);
    check("cross_entropy", 1e-6, &[x], &|tape, ins| {
        ops::cross_entropy(tape, &ins[0], &[0, 2, 4, 5]).unwrap()
    });
    let (a, b) = (rand_tensor(&[3, 7]), rand_tensor(&[3, 7]));
    check("mse", 1e-6, &[a, b], &|tape, ins| {
        ops::mse(tape, &ins[0], &ins[1]).unwrap()
    });
    let (a, b, proj) = (
        rand_tensor(&[2, 2, 4, 4]),
        rand_tensor(&[2, 3, 4, 4]),
        rand_tensor(&[2, 5, 4, 4]),
    );
    check("concat_channels", 1e-6, &[a, b, proj], &|tape, ins| {
        let y = ops::concat_channels(tape, &[&ins[0], &ins[1]]).unwrap();
        ops::dot(tape, &y, &ins[2]).unwrap()
    });

    // attention block
    let oga_cfg = OgaConfig { c_in: 3, c_out: 2, kernel_size: 3, num_kernels: 2, reduction_ratio: 4 };
    let mut block_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x517c_c1b7_2722_0a95);
    let block = OgaBlock::new(oga_cfg, "oga", &mut block_rng).expect("valid config");
    let features = rand_tensor(&[2, 3, 8, 8]);
    let proj = rand_tensor(&[2, 2, 8, 8]);
    let mut inputs = vec![features, proj];
    block.visit(&mut |p| inputs.push(p.tensor.clone()));
    let block_for_check = block.clone();
    check("oga_block", 1e-5, &inputs, &move |tape, ins| {
        let mut b = block_for_check.clone();
        let mut idx = 2;
        b.visit_mut(&mut |p| {
            p.tensor = ins[idx].clone();
            idx += 1;
        });
        let y = b.forward(tape, &ins[0]).unwrap();
        ops::dot(tape, &y, &ins[1]).unwrap()
    });

    // End-to-end miniature model (image size 16). lambda = 1 and the pinned
    // init/image pair keep every gradient coordinate above the f64
    // finite-difference noise floor; the user seed drives the op-level cases.
    let config = ModelConfig {
        image_size: 16,
        num_classes: 3,
        encoder_widths: vec![4],
        oga: OgaConfig { c_in: 4, c_out: 4, kernel_size: 3, num_kernels: 2, reduction_ratio: 4 },
        recon_loss_weight: 1.0,
        ..ModelConfig::default()
    };
    let mut model_rng = ChaCha20Rng::seed_from_u64(63);
    let model = Model::new(config, 63).expect("valid miniature config");
    let image = Tensor::new(
        (0..3 * 256).map(|_| model_rng.gen_range(0.0..1.0)).collect(),
        &[1, 3, 16, 16],
    );
    let mut inputs = vec![image];
    model.visit_params(&mut |p| inputs.push(p.tensor.clone()));
    check("end_to_end_miniature", 1e-5, &inputs, &move |tape, ins| {
        let mut m = model.clone();
        let mut idx = 1;
        m.visit_params_mut(&mut |p| {
            p.tensor = ins[idx].clone();
            idx += 1;
        });
        m.forward_loss(tape, &ins[0], &[2], Mode::Train).unwrap().loss
    });

    entries
}
