//! Shared patch-gather geometry for the convolution family.
//!
//! `im2col` lays every k x k receptive field out as a column so convolution
//! becomes one GEMM; `col2im` is its exact adjoint (scatter-add), which is
//! what both the conv input-gradient and the transposed-conv forward need.

use crate::error::{Error, Result};

/// Output extent of a strided, zero-padded correlation along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::dim(format!(
            "kernel extent {kernel} exceeds padded input extent {padded} (input {input}, padding {padding})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of the transposed (fractionally strided) convolution.
pub fn tconv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * padding + 1 {
        return Err(Error::dim(format!(
            "transposed conv output extent would be non-positive: (({input}-1)*{stride} + {kernel}) - 2*{padding} < 1"
        )));
    }
    Ok(grown - 2 * padding)
}

/// Gathers patches of `img` [c, h, w] into `cols` [c*k*k, oh*ow] for one
/// sample. Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    img: &[f64],
    cols: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    let pad = padding as isize;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    let dst = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        cols[dst..dst + ow].fill(0.0);
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        cols[dst + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            img[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` [c*k*k, oh*ow] back into
/// `img` [c, h, w]. Caller zeroes `img` first when accumulation across calls
/// is not wanted.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    img: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    let pad = padding as isize;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            img[dst_row + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents() {
        assert_eq!(conv_out_extent(8, 3, 1, 1).unwrap(), 8);
        assert_eq!(conv_out_extent(8, 3, 2, 1).unwrap(), 4);
        assert_eq!(conv_out_extent(3, 3, 1, 0).unwrap(), 1);
        assert!(conv_out_extent(2, 5, 1, 0).is_err());
        assert_eq!(tconv_out_extent(4, 2, 2, 0).unwrap(), 8);
        assert_eq!(tconv_out_extent(1, 2, 2, 0).unwrap(), 2);
        assert!(tconv_out_extent(1, 1, 1, 1).is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish x, y.
        let (c, h, w, k, stride, padding) = (2, 5, 4, 3, 2, 1);
        let oh = conv_out_extent(h, k, stride, padding).unwrap();
        let ow = conv_out_extent(w, k, stride, padding).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..c * k * k * oh * ow).map(|i| ((i * 17) % 7) as f64 - 3.0).collect();

        let mut cols = vec![0.0; c * k * k * oh * ow];
        im2col(&x, &mut cols, c, h, w, k, stride, padding, oh, ow);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();

        let mut back = vec![0.0; c * h * w];
        col2im(&y, &mut back, c, h, w, k, stride, padding, oh, ow);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
