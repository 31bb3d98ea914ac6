//! Convolution-family oracle comparisons, adjointness, gradient checks, and
//! determinism of forward+backward.

mod common;

use common::{conv2d_naive, max_abs_diff, rand_tensor, rng, tconv2d_naive};
use ogawave::gradcheck::{gradient_check, DEFAULT_EPSILON};
use ogawave::ops;
use ogawave::{Tape, Tensor};
use rand::Rng;

#[test]
fn conv2d_all_ones_sums_window() {
    let mut tape = Tape::no_grad();
    let x = Tensor::ones(&[1, 1, 3, 3]);
    let w = Tensor::ones(&[1, 1, 3, 3]);
    let y = ops::conv2d(&mut tape, &x, &w, None, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[9.0]);
}

#[test]
fn conv2d_identity_kernel_passes_input_through() {
    let mut r = rng(2);
    let mut tape = Tape::no_grad();
    let x = rand_tensor(&mut r, &[2, 3, 5, 7]);
    let mut w = Tensor::zeros(&[3, 3, 1, 1]).data().to_vec();
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let w = Tensor::new(w, &[3, 3, 1, 1]);
    let y = ops::conv2d(&mut tape, &x, &w, None, 1, 0).unwrap();
    assert_eq!(max_abs_diff(&y, &x), 0.0);
}

#[test]
fn conv2d_matches_naive_loop_oracle() {
    let mut r = rng(3);
    let mut tape = Tape::no_grad();
    let x = rand_tensor(&mut r, &[2, 3, 8, 8]);
    let w = rand_tensor(&mut r, &[4, 3, 3, 3]);
    let b = rand_tensor(&mut r, &[4]);
    for (stride, padding) in [(1, 1), (1, 0), (2, 1), (3, 2)] {
        let got = ops::conv2d(&mut tape, &x, &w, Some(&b), stride, padding).unwrap();
        let want = conv2d_naive(&x, &w, Some(b.data()), stride, padding);
        assert!(max_abs_diff(&got, &want) <= 1e-12, "stride {stride} padding {padding}");
    }
}

#[test]
fn conv2d_rejects_channel_mismatch_naming_both_shapes() {
    let mut tape = Tape::no_grad();
    let x = Tensor::zeros(&[1, 3, 4, 4]);
    let w = Tensor::zeros(&[2, 5, 3, 3]);
    let err = ops::conv2d(&mut tape, &x, &w, None, 1, 1).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains('3') && msg.contains('5'), "{msg}");
}

#[test]
fn conv2d_per_sample_degenerate_batch_equals_shared_conv() {
    let mut r = rng(4);
    let mut tape = Tape::no_grad();
    let x = rand_tensor(&mut r, &[2, 3, 6, 6]);
    let w = rand_tensor(&mut r, &[4, 3, 3, 3]);
    let mut stacked = w.data().to_vec();
    stacked.extend_from_slice(w.data());
    let ws = Tensor::new(stacked, &[2, 4, 3, 3, 3]);
    let shared = ops::conv2d(&mut tape, &x, &w, None, 1, 1).unwrap();
    let per = ops::conv2d_per_sample(&mut tape, &x, &ws, None, 1, 1).unwrap();
    assert!(max_abs_diff(&shared, &per) <= 1e-15);
}

#[test]
fn conv2d_per_sample_single_sample_equals_conv2d() {
    let mut r = rng(5);
    let mut tape = Tape::no_grad();
    let x = rand_tensor(&mut r, &[1, 2, 5, 5]);
    let w = rand_tensor(&mut r, &[3, 2, 3, 3]);
    let ws = Tensor::new(w.data().to_vec(), &[1, 3, 2, 3, 3]);
    let a = ops::conv2d(&mut tape, &x, &w, None, 2, 1).unwrap();
    let b = ops::conv2d_per_sample(&mut tape, &x, &ws, None, 2, 1).unwrap();
    assert!(max_abs_diff(&a, &b) <= 1e-15);
}

#[test]
fn conv2d_per_sample_matches_loop_over_samples_oracle() {
    let mut r = rng(6);
    let mut tape = Tape::no_grad();
    let x = rand_tensor(&mut r, &[3, 2, 6, 6]);
    let ws = rand_tensor(&mut r, &[3, 4, 2, 3, 3]);
    let got = ops::conv2d_per_sample(&mut tape, &x, &ws, None, 1, 1).unwrap();
    let wlen = 4 * 2 * 3 * 3;
    for i in 0..3 {
        let xi = Tensor::new(x.data()[i * 2 * 36..(i + 1) * 2 * 36].to_vec(), &[1, 2, 6, 6]);
        let wi = Tensor::new(ws.data()[i * wlen..(i + 1) * wlen].to_vec(), &[4, 2, 3, 3]);
        let want = conv2d_naive(&xi, &wi, None, 1, 1);
        let slice = Tensor::new(got.data()[i * 4 * 36..(i + 1) * 4 * 36].to_vec(), &[1, 4, 6, 6]);
        assert!(max_abs_diff(&slice, &want) <= 1e-12, "sample {i}");
    }
}

#[test]
fn conv2d_per_sample_rejects_batch_mismatch() {
    let mut tape = Tape::no_grad();
    let x = Tensor::zeros(&[2, 3, 4, 4]);
    let ws = Tensor::zeros(&[3, 2, 3, 3, 3]);
    assert!(ops::conv2d_per_sample(&mut tape, &x, &ws, None, 1, 1).is_err());
}

#[test]
fn tconv_stamps_kernel() {
    let mut tape = Tape::no_grad();
    let x = Tensor::ones(&[1, 1, 1, 1]);
    let w = Tensor::ones(&[1, 1, 2, 2]);
    let y = ops::transposed_conv2d(&mut tape, &x, &w, None, 2, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn tconv_matches_zero_insertion_oracle() {
    let mut r = rng(7);
    let mut tape = Tape::no_grad();
    for (stride, padding, k) in [(2, 0, 2), (2, 1, 4), (1, 1, 3), (3, 0, 3)] {
        let x = rand_tensor(&mut r, &[2, 3, 5, 4]);
        let w = rand_tensor(&mut r, &[3, 2, k, k]);
        let got = ops::transposed_conv2d(&mut tape, &x, &w, None, stride, padding).unwrap();
        let want = tconv2d_naive(&x, &w, stride, padding);
        assert!(
            max_abs_diff(&got, &want) <= 1e-12,
            "stride {stride} padding {padding} k {k}"
        );
    }
}

#[test]
fn tconv_forward_is_conv_backward_input() {
    // Definitional identity: with the same weight buffer, tconv(gy) equals
    // the gradient conv2d backward assigns to its input. Needs an exact
    // geometry (no remainder in conv's strided division).
    let mut r = rng(8);
    let (stride, padding) = (2, 1);
    let x = rand_tensor(&mut r, &[2, 3, 9, 9]).requires_grad(true);
    let w_conv = rand_tensor(&mut r, &[4, 3, 3, 3]);
    let gy = rand_tensor(&mut r, &[2, 4, 5, 5]);

    let mut tape = Tape::new();
    let y = ops::conv2d(&mut tape, &x, &w_conv, None, stride, padding).unwrap();
    assert_eq!(y.shape(), gy.shape());
    let proj = ops::dot(&mut tape, &y, &gy).unwrap();
    let grads = tape.backward(&proj);
    let dx = grads.grad_of(&x);

    // weight [C_out=4, C_in=3, k, k] reinterpreted as tconv weight [4, 3, k, k]
    let mut tape = Tape::no_grad();
    let w_as_tconv = Tensor::new(w_conv.data().to_vec(), &[4, 3, 3, 3]);
    let via_tconv = ops::transposed_conv2d(&mut tape, &gy, &w_as_tconv, None, stride, padding).unwrap();
    assert!(max_abs_diff(&dx, &via_tconv) <= 1e-12);
}

#[test]
fn conv_tconv_adjoint_identity() {
    // <conv2d(x, w), y> == <x, tconv(y, w)> to 1e-10 on exact geometries.
    let mut r = rng(9);
    for (h, stride, padding, k) in [(8, 1, 1, 3), (9, 2, 1, 3), (9, 2, 0, 3), (8, 2, 0, 2)] {
        let x = rand_tensor(&mut r, &[2, 3, h, h]);
        let w = rand_tensor(&mut r, &[4, 3, k, k]);
        let mut tape = Tape::no_grad();
        let cx = ops::conv2d(&mut tape, &x, &w, None, stride, padding).unwrap();
        let y = rand_tensor(&mut r, cx.shape());
        let lhs = ops::dot(&mut tape, &cx, &y).unwrap().item();
        let w_t = Tensor::new(w.data().to_vec(), &[4, 3, k, k]);
        let ty = ops::transposed_conv2d(&mut tape, &y, &w_t, None, stride, padding).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let rhs = ops::dot(&mut tape, &x, &ty).unwrap().item();
        assert!((lhs - rhs).abs() <= 1e-10, "stride {stride} padding {padding}: {lhs} vs {rhs}");
    }
}

#[test]
fn conv_family_gradient_checks() {
    let mut r = rng(10);
    let x = rand_tensor(&mut r, &[2, 3, 6, 6]);
    let w = rand_tensor(&mut r, &[4, 3, 3, 3]);
    let b = rand_tensor(&mut r, &[4]);
    let proj = rand_tensor(&mut r, &[2, 4, 3, 3]);
    let report = gradient_check(
        &|tape, ins| {
            let y = ops::conv2d(tape, &ins[0], &ins[1], Some(&ins[2]), 2, 1).unwrap();
            ops::dot(tape, &y, &ins[3]).unwrap()
        },
        &[x.clone(), w, b.clone(), proj.clone()],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "conv2d {report:?}");

    let ws = rand_tensor(&mut r, &[2, 4, 3, 3, 3]);
    let report = gradient_check(
        &|tape, ins| {
            let y = ops::conv2d_per_sample(tape, &ins[0], &ins[1], Some(&ins[2]), 1, 1).unwrap();
            let s = ops::sigmoid(tape, &y);
            ops::sum_all(tape, &s)
        },
        &[x.clone(), ws, b],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-5), "conv2d_per_sample {report:?}");

    let xt = rand_tensor(&mut r, &[2, 3, 4, 4]);
    let wt = rand_tensor(&mut r, &[3, 2, 2, 2]);
    let bt = rand_tensor(&mut r, &[2]);
    let projt = rand_tensor(&mut r, &[2, 2, 8, 8]);
    let report = gradient_check(
        &|tape, ins| {
            let y = ops::transposed_conv2d(tape, &ins[0], &ins[1], Some(&ins[2]), 2, 0).unwrap();
            ops::dot(tape, &y, &ins[3]).unwrap()
        },
        &[xt, wt, bt, projt],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "transposed_conv2d {report:?}");
}

#[test]
fn pooling_and_batchnorm_gradient_checks() {
    let mut r = rng(11);
    let x = rand_tensor(&mut r, &[2, 3, 6, 6]);
    let report = gradient_check(
        &|tape, ins| {
            let y = ops::global_avg_pool(tape, &ins[0]).unwrap();
            let s = ops::sigmoid(tape, &y);
            ops::sum_all(tape, &s)
        },
        &[x.clone()],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "global_avg_pool {report:?}");

    let report = gradient_check(
        &|tape, ins| {
            let y = ops::maxpool2d(tape, &ins[0]).unwrap();
            let s = ops::sigmoid(tape, &y);
            ops::sum_all(tape, &s)
        },
        &[x.clone()],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "maxpool2d {report:?}");

    let report = gradient_check(
        &|tape, ins| {
            let y = ops::avg_pool2d(tape, &ins[0], 3).unwrap();
            let s = ops::sigmoid(tape, &y);
            ops::sum_all(tape, &s)
        },
        &[x.clone()],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "avg_pool2d {report:?}");

    let gamma = rand_tensor(&mut r, &[3]);
    let beta = rand_tensor(&mut r, &[3]);
    let proj = rand_tensor(&mut r, &[2, 3, 6, 6]);
    let report = gradient_check(
        &|tape, ins| {
            let out = ops::batchnorm2d(
                tape,
                &ins[0],
                &ins[1],
                &ins[2],
                &[0.0; 3],
                &[1.0; 3],
                1e-5,
                ops::BatchNormMode::Train,
            )
            .unwrap();
            ops::dot(tape, &out.output, &ins[3]).unwrap()
        },
        &[x.clone(), gamma.clone(), beta.clone(), proj.clone()],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-5), "batchnorm train {report:?}");

    let report = gradient_check(
        &|tape, ins| {
            let out = ops::batchnorm2d(
                tape,
                &ins[0],
                &ins[1],
                &ins[2],
                &[0.1, -0.2, 0.3],
                &[1.5, 0.7, 2.0],
                1e-5,
                ops::BatchNormMode::Eval,
            )
            .unwrap();
            ops::dot(tape, &out.output, &ins[3]).unwrap()
        },
        &[x, gamma, beta, proj],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "batchnorm eval {report:?}");
}

#[test]
fn cross_entropy_examples_and_oracle() {
    let mut tape = Tape::no_grad();
    // uniform logits, C = 10 -> ln 10
    let logits = Tensor::zeros(&[3, 10]);
    let loss = ops::cross_entropy(&mut tape, &logits, &[1, 5, 9]).unwrap();
    assert!((loss.item() - 10.0_f64.ln()).abs() <= 1e-12);

    // saturated case
    let logits = Tensor::new(vec![100.0, 0.0], &[1, 2]);
    let loss = ops::cross_entropy(&mut tape, &logits, &[0]).unwrap();
    assert!(loss.item() >= 0.0 && loss.item() <= 1e-12);

    // random case vs the unstabilized softmax-then-log oracle
    let mut r = rng(12);
    let logits = rand_tensor(&mut r, &[4, 10]);
    let labels = [3usize, 0, 7, 9];
    let loss = ops::cross_entropy(&mut tape, &logits, &labels).unwrap();
    let mut want = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &logits.data()[i * 10..(i + 1) * 10];
        let sum: f64 = row.iter().map(|v| v.exp()).sum();
        want += -(row[l].exp() / sum).ln();
    }
    want /= 4.0;
    assert!((loss.item() - want).abs() <= 1e-9);

    // out-of-range label names the index
    let err = ops::cross_entropy(&mut tape, &Tensor::zeros(&[2, 3]), &[1, 3]).unwrap_err();
    assert!(err.to_string().contains("index 1"), "{err}");
}

#[test]
fn batchnorm_training_normalizes_batch_statistics() {
    let mut r = rng(13);
    let mut tape = Tape::no_grad();
    let x = rand_tensor(&mut r, &[4, 3, 5, 5]);
    let out = ops::batchnorm2d(
        &mut tape,
        &x,
        &Tensor::ones(&[3]),
        &Tensor::zeros(&[3]),
        &[0.0; 3],
        &[1.0; 3],
        1e-12,
        ops::BatchNormMode::Train,
    )
    .unwrap();
    let y = out.output;
    let plane = 25;
    for c in 0..3 {
        let mut vals = Vec::new();
        for n in 0..4 {
            let base = (n * 3 + c) * plane;
            vals.extend_from_slice(&y.data()[base..base + plane]);
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() <= 1e-10, "channel {c} mean {m}");
        assert!((v - 1.0).abs() <= 1e-8, "channel {c} var {v}");
    }
}

#[test]
fn forward_backward_is_bitwise_deterministic() {
    let run = || {
        let mut r = rng(99);
        let x = rand_tensor(&mut r, &[4, 3, 8, 8]).requires_grad(true);
        let w = rand_tensor(&mut r, &[8, 3, 3, 3]).requires_grad(true);
        let b = rand_tensor(&mut r, &[8]).requires_grad(true);
        let mut tape = Tape::new();
        let y = ops::conv2d(&mut tape, &x, &w, Some(&b), 2, 1).unwrap();
        let y = ops::relu(&mut tape, &y);
        let p = ops::global_avg_pool(&mut tape, &y).unwrap();
        let loss = ops::sum_all(&mut tape, &p);
        let grads = tape.backward(&loss);
        (
            loss.item(),
            grads.get(&x).unwrap().to_vec(),
            grads.get(&w).unwrap().to_vec(),
            grads.get(&b).unwrap().to_vec(),
        )
    };
    let (l1, gx1, gw1, gb1) = run();
    let (l2, gx2, gw2, gb2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(gb1.iter().zip(&gb2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn maxpool_example_values() {
    let mut tape = Tape::no_grad();
    let x = Tensor::new(
        vec![
            1.0, 2.0, 5.0, 6.0, //
            3.0, 4.0, 7.0, 8.0, //
            -1.0, -2.0, 0.0, 0.5, //
            -3.0, -4.0, 0.25, 0.125,
        ],
        &[1, 1, 4, 4],
    );
    let y = ops::maxpool2d(&mut tape, &x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[4.0, 8.0, -1.0, 0.5]);
}

#[test]
fn softmax_gradcheck_random_case() {
    let mut r = rng(14);
    let x = rand_tensor(&mut r, &[3, 4]);
    let weights = rand_tensor(&mut r, &[3, 4]);
    let report = gradient_check(
        &|tape, ins| {
            let s = ops::softmax(tape, &ins[0], 1).unwrap();
            ops::dot(tape, &s, &ins[1]).unwrap()
        },
        &[x, weights],
        DEFAULT_EPSILON,
    );
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn cross_entropy_is_nonnegative_property() {
    let mut r = rng(15);
    let mut tape = Tape::no_grad();
    for _ in 0..50 {
        let n = r.gen_range(1..6);
        let c = r.gen_range(2..8);
        let logits = rand_tensor(&mut r, &[n, c]);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let loss = ops::cross_entropy(&mut tape, &logits, &labels).unwrap();
        assert!(loss.item() >= 0.0);
    }
}
