//! Independent oracles shared by the integration suites.
//!
//! Everything here is written as directly as possible (nested loops, O(N^2)
//! scans) and stays decoupled from the library's GEMM/im2col path so the two
//! can disagree when one is wrong.

#![allow(dead_code)]

use ogawave::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape)
}

/// Six nested loops, straight from the definition of strided zero-padded
/// cross-correlation.
pub fn conv2d_naive(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Tensor {
    let (n, c_in, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    assert_eq!(weight.shape()[1], c_in);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let x = input.data();
    let wd = weight.data();
    let mut out = vec![0.0; n * c_out * oh * ow];
    for ni in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b[co]).unwrap_or(0.0);
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    let xv = x[((ni * c_in + ci) * h + iy as usize) * w
                                        + ix as usize];
                                    let wv = wd[((co * c_in + ci) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    out[((ni * c_out + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(out, &[n, c_out, oh, ow])
}

/// Transposed convolution by its textbook construction: insert stride-1
/// zeros between input samples, pad by k-1-padding, then correlate with the
/// weight flipped in both spatial axes.
pub fn tconv2d_naive(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Tensor {
    let (n, c_in, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (c_out, k) = (weight.shape()[1], weight.shape()[2]);
    assert_eq!(weight.shape()[0], c_in);

    // zero-inserted image
    let (uh, uw) = ((h - 1) * stride + 1, (w - 1) * stride + 1);
    let mut up = vec![0.0; n * c_in * uh * uw];
    for ni in 0..n {
        for ci in 0..c_in {
            for y in 0..h {
                for x in 0..w {
                    up[((ni * c_in + ci) * uh + y * stride) * uw + x * stride] =
                        input.data()[((ni * c_in + ci) * h + y) * w + x];
                }
            }
        }
    }
    let up = Tensor::new(up, &[n, c_in, uh, uw]);

    // weight: [C_in, C_out, k, k] -> flipped conv weight [C_out, C_in, k, k]
    let mut flip = vec![0.0; c_in * c_out * k * k];
    for ci in 0..c_in {
        for co in 0..c_out {
            for ky in 0..k {
                for kx in 0..k {
                    flip[((co * c_in + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        weight.data()[((ci * c_out + co) * k + ky) * k + kx];
                }
            }
        }
    }
    let flip = Tensor::new(flip, &[c_out, c_in, k, k]);
    conv2d_naive(&up, &flip, None, 1, k - 1 - padding)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    a.max_abs_diff(b)
}
