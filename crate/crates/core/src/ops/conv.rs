//! conv2d, per-sample conv2d, and transposed conv2d.
//!
//! All three are built on the same im2col/col2im geometry plus GEMM. The
//! convolution is a cross-correlation (no kernel flip), zero padding, and the
//! transposed convolution's forward map is exactly the input-gradient map of
//! conv2d with the same weight buffer (layout [C_in, C_out, k, k]).
//!
//! Parallelism is per-sample with disjoint output slices, and every reduction
//! over samples runs in fixed order, so forward and backward are bitwise
//! deterministic regardless of thread count.

use rayon::prelude::*;

use super::geometry::{col2im, conv_out_extent, im2col, tconv_out_extent};
use super::matmul::{dgemm, dgemm_a_bt, dgemm_at_b};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn cols_len(&self) -> usize {
        self.c_in * self.k * self.k * self.oh * self.ow
    }
}

fn conv_geom(
    input_shape: &[usize],
    c_out: usize,
    c_in_w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    if input_shape.len() != 4 {
        return Err(Error::dim(format!(
            "conv2d: input must be [N, C, H, W], got {input_shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d: stride must be >= 1".to_string()));
    }
    let (n, c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if c_in != c_in_w {
        return Err(Error::dim(format!(
            "conv2d: input channel count {c_in} (input shape {input_shape:?}) does not match \
             weight input channels {c_in_w}"
        )));
    }
    let oh = conv_out_extent(h, k, stride, padding)?;
    let ow = conv_out_extent(w, k, stride, padding)?;
    Ok(ConvGeom { n, c_in, h, w, c_out, k, stride, padding, oh, ow })
}

fn check_bias(bias: Option<&Tensor>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match output channels [{c_out}]",
                b.shape()
            )));
        }
    }
    Ok(())
}

/// Forward correlation for one sample: out[c_out, oh*ow] = W * im2col(x).
fn conv_forward_sample(x: &[f64], weight: &[f64], out: &mut [f64], g: &ConvGeom, cols: &mut [f64]) {
    im2col(x, cols, g.c_in, g.h, g.w, g.k, g.stride, g.padding, g.oh, g.ow);
    dgemm(
        g.c_out,
        g.c_in * g.k * g.k,
        g.oh * g.ow,
        weight,
        cols,
        out,
        0.0,
    );
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (c, b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

/// 2D cross-correlation with zero padding.
///
/// input [N, C_in, H, W], weight [C_out, C_in, k, k], optional bias [C_out].
pub fn conv2d(
    tape: &mut Tape,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::dim(format!(
            "conv2d: weight must be [C_out, C_in, k, k], got {ws:?}"
        )));
    }
    let g = conv_geom(input.shape(), ws[0], ws[1], ws[2], stride, padding)?;
    check_bias(bias, g.c_out)?;

    let out_plane = g.oh * g.ow;
    let mut data = vec![0.0; g.n * g.c_out * out_plane];
    let in_stride = g.c_in * g.h * g.w;
    let x = input.data();
    let wdat = weight.data();
    data.par_chunks_mut(g.c_out * out_plane)
        .enumerate()
        .for_each(|(i, out)| {
            let mut cols = vec![0.0; g.cols_len()];
            conv_forward_sample(&x[i * in_stride..(i + 1) * in_stride], wdat, out, &g, &mut cols);
            if let Some(b) = bias {
                add_channel_bias(out, b.data(), out_plane);
            }
        });

    let mut out = Tensor::new(data, &[g.n, g.c_out, g.oh, g.ow]);
    let mut tracked: Vec<&Tensor> = vec![input, weight];
    if let Some(b) = bias {
        tracked.push(b);
    }
    if tape.should_record(&tracked) {
        let (in_id, in_tracks, x) = (input.id(), input.tracks_grad(), input.data_arc());
        let (w_id, w_tracks, wdat) = (weight.id(), weight.tracks_grad(), weight.data_arc());
        let bias_info = bias.map(|b| (b.id(), b.tracks_grad()));
        tape.record(&mut out, move |gy, store| {
            let ckk = g.c_in * g.k * g.k;
            let plane = g.oh * g.ow;
            if in_tracks {
                let mut dx = vec![0.0; g.n * in_stride];
                dx.par_chunks_mut(in_stride).enumerate().for_each(|(i, dxi)| {
                    let mut cols = vec![0.0; g.cols_len()];
                    dgemm_at_b(
                        ckk,
                        g.c_out,
                        plane,
                        &wdat,
                        &gy[i * g.c_out * plane..(i + 1) * g.c_out * plane],
                        &mut cols,
                        0.0,
                    );
                    col2im(&cols, dxi, g.c_in, g.h, g.w, g.k, g.stride, g.padding, g.oh, g.ow);
                });
                store.accumulate(in_id, &dx);
            }
            if w_tracks {
                // Per-sample partials reduced in sample order keeps the sum
                // bitwise stable under any thread schedule.
                let partials: Vec<Vec<f64>> = (0..g.n)
                    .into_par_iter()
                    .map(|i| {
                        let mut cols = vec![0.0; g.cols_len()];
                        im2col(
                            &x[i * in_stride..(i + 1) * in_stride],
                            &mut cols,
                            g.c_in,
                            g.h,
                            g.w,
                            g.k,
                            g.stride,
                            g.padding,
                            g.oh,
                            g.ow,
                        );
                        let mut dw = vec![0.0; g.c_out * ckk];
                        dgemm_a_bt(
                            g.c_out,
                            plane,
                            ckk,
                            &gy[i * g.c_out * plane..(i + 1) * g.c_out * plane],
                            &cols,
                            &mut dw,
                            0.0,
                        );
                        dw
                    })
                    .collect();
                let mut dw = vec![0.0; g.c_out * ckk];
                for p in &partials {
                    for (d, v) in dw.iter_mut().zip(p) {
                        *d += v;
                    }
                }
                store.accumulate(w_id, &dw);
            }
            if let Some((b_id, true)) = bias_info {
                let mut db = vec![0.0; g.c_out];
                for i in 0..g.n {
                    for c in 0..g.c_out {
                        let base = (i * g.c_out + c) * plane;
                        db[c] += gy[base..base + plane].iter().sum::<f64>();
                    }
                }
                store.accumulate(b_id, &db);
            }
        });
    }
    Ok(out)
}

/// conv2d with a distinct weight tensor per sample.
///
/// input [N, C_in, H, W], weights [N, C_out, C_in, k, k], optional shared
/// bias [C_out]. output[i] equals conv2d(input[i..i+1], weights[i], ...).
pub fn conv2d_per_sample(
    tape: &mut Tape,
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ws = weights.shape();
    if ws.len() != 5 || ws[3] != ws[4] {
        return Err(Error::dim(format!(
            "conv2d_per_sample: weights must be [N, C_out, C_in, k, k], got {ws:?}"
        )));
    }
    if ws[0] != input.shape()[0] {
        return Err(Error::dim(format!(
            "conv2d_per_sample: weights leading extent {} does not match batch size {}",
            ws[0],
            input.shape()[0]
        )));
    }
    let g = conv_geom(input.shape(), ws[1], ws[2], ws[3], stride, padding)?;
    check_bias(bias, g.c_out)?;

    let out_plane = g.oh * g.ow;
    let in_stride = g.c_in * g.h * g.w;
    let w_stride = g.c_out * g.c_in * g.k * g.k;
    let mut data = vec![0.0; g.n * g.c_out * out_plane];
    let x = input.data();
    let wdat = weights.data();
    data.par_chunks_mut(g.c_out * out_plane)
        .enumerate()
        .for_each(|(i, out)| {
            let mut cols = vec![0.0; g.cols_len()];
            conv_forward_sample(
                &x[i * in_stride..(i + 1) * in_stride],
                &wdat[i * w_stride..(i + 1) * w_stride],
                out,
                &g,
                &mut cols,
            );
            if let Some(b) = bias {
                add_channel_bias(out, b.data(), out_plane);
            }
        });

    let mut out = Tensor::new(data, &[g.n, g.c_out, g.oh, g.ow]);
    let mut tracked: Vec<&Tensor> = vec![input, weights];
    if let Some(b) = bias {
        tracked.push(b);
    }
    if tape.should_record(&tracked) {
        let (in_id, in_tracks, x) = (input.id(), input.tracks_grad(), input.data_arc());
        let (w_id, w_tracks, wdat) = (weights.id(), weights.tracks_grad(), weights.data_arc());
        let bias_info = bias.map(|b| (b.id(), b.tracks_grad()));
        tape.record(&mut out, move |gy, store| {
            let ckk = g.c_in * g.k * g.k;
            let plane = g.oh * g.ow;
            if in_tracks {
                let mut dx = vec![0.0; g.n * in_stride];
                dx.par_chunks_mut(in_stride).enumerate().for_each(|(i, dxi)| {
                    let mut cols = vec![0.0; g.cols_len()];
                    dgemm_at_b(
                        ckk,
                        g.c_out,
                        plane,
                        &wdat[i * w_stride..(i + 1) * w_stride],
                        &gy[i * g.c_out * plane..(i + 1) * g.c_out * plane],
                        &mut cols,
                        0.0,
                    );
                    col2im(&cols, dxi, g.c_in, g.h, g.w, g.k, g.stride, g.padding, g.oh, g.ow);
                });
                store.accumulate(in_id, &dx);
            }
            if w_tracks {
                let mut dw = vec![0.0; g.n * w_stride];
                dw.par_chunks_mut(w_stride).enumerate().for_each(|(i, dwi)| {
                    let mut cols = vec![0.0; g.cols_len()];
                    im2col(
                        &x[i * in_stride..(i + 1) * in_stride],
                        &mut cols,
                        g.c_in,
                        g.h,
                        g.w,
                        g.k,
                        g.stride,
                        g.padding,
                        g.oh,
                        g.ow,
                    );
                    dgemm_a_bt(
                        g.c_out,
                        plane,
                        ckk,
                        &gy[i * g.c_out * plane..(i + 1) * g.c_out * plane],
                        &cols,
                        dwi,
                        0.0,
                    );
                });
                store.accumulate(w_id, &dw);
            }
            if let Some((b_id, true)) = bias_info {
                let mut db = vec![0.0; g.c_out];
                for i in 0..g.n {
                    for c in 0..g.c_out {
                        let base = (i * g.c_out + c) * plane;
                        db[c] += gy[base..base + plane].iter().sum::<f64>();
                    }
                }
                store.accumulate(b_id, &db);
            }
        });
    }
    Ok(out)
}

/// Transposed (fractionally strided) convolution.
///
/// input [N, C_in, H, W], weight [C_in, C_out, k, k], optional bias [C_out].
/// Output extent is (H-1)*stride - 2*padding + k. The forward map is the
/// adjoint of conv2d's forward with the same weight buffer, which the tests
/// pin as the definitional identity.
pub fn transposed_conv2d(
    tape: &mut Tape,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::dim(format!(
            "transposed_conv2d: weight must be [C_in, C_out, k, k], got {ws:?}"
        )));
    }
    let is = input.shape();
    if is.len() != 4 {
        return Err(Error::dim(format!(
            "transposed_conv2d: input must be [N, C, H, W], got {is:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::dim("transposed_conv2d: stride must be >= 1".to_string()));
    }
    if is[1] != ws[0] {
        return Err(Error::dim(format!(
            "transposed_conv2d: input channels {} do not match weight input channels {}",
            is[1], ws[0]
        )));
    }
    let (n, c_in, h, w) = (is[0], is[1], is[2], is[3]);
    let (c_out, k) = (ws[1], ws[2]);
    let oh = tconv_out_extent(h, k, stride, padding)?;
    let ow = tconv_out_extent(w, k, stride, padding)?;
    check_bias(bias, c_out)?;

    // Everything below uses the "conv view": the tconv output plays the conv
    // input role, so im2col/col2im run with (oh, ow) as the image extents.
    let okk = c_out * k * k;
    let in_plane = h * w;
    let out_stride = c_out * oh * ow;
    let x = input.data();
    let wdat = weight.data();
    let mut data = vec![0.0; n * out_stride];
    data.par_chunks_mut(out_stride).enumerate().for_each(|(i, out)| {
        let mut cols = vec![0.0; okk * in_plane];
        // cols[(c_out,ky,kx), (y,x)] = sum_ci W[ci, c_out, ky, kx] * x[ci, y, x]
        dgemm_at_b(
            okk,
            c_in,
            in_plane,
            &wdat,
            &x[i * c_in * in_plane..(i + 1) * c_in * in_plane],
            &mut cols,
            0.0,
        );
        col2im(&cols, out, c_out, oh, ow, k, stride, padding, h, w);
        if let Some(b) = bias {
            add_channel_bias(out, b.data(), oh * ow);
        }
    });

    let mut out = Tensor::new(data, &[n, c_out, oh, ow]);
    let mut tracked: Vec<&Tensor> = vec![input, weight];
    if let Some(b) = bias {
        tracked.push(b);
    }
    if tape.should_record(&tracked) {
        let (in_id, in_tracks, x) = (input.id(), input.tracks_grad(), input.data_arc());
        let (w_id, w_tracks, wdat) = (weight.id(), weight.tracks_grad(), weight.data_arc());
        let bias_info = bias.map(|b| (b.id(), b.tracks_grad()));
        tape.record(&mut out, move |gy, store| {
            if in_tracks {
                // Gradient w.r.t. input is a plain forward correlation of gy.
                let mut dx = vec![0.0; n * c_in * in_plane];
                dx.par_chunks_mut(c_in * in_plane).enumerate().for_each(|(i, dxi)| {
                    let mut cols = vec![0.0; okk * in_plane];
                    im2col(
                        &gy[i * out_stride..(i + 1) * out_stride],
                        &mut cols,
                        c_out,
                        oh,
                        ow,
                        k,
                        stride,
                        padding,
                        h,
                        w,
                    );
                    dgemm(c_in, okk, in_plane, &wdat, &cols, dxi, 0.0);
                });
                store.accumulate(in_id, &dx);
            }
            if w_tracks {
                let partials: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut cols = vec![0.0; okk * in_plane];
                        im2col(
                            &gy[i * out_stride..(i + 1) * out_stride],
                            &mut cols,
                            c_out,
                            oh,
                            ow,
                            k,
                            stride,
                            padding,
                            h,
                            w,
                        );
                        let mut dw = vec![0.0; c_in * okk];
                        dgemm_a_bt(
                            c_in,
                            in_plane,
                            okk,
                            &x[i * c_in * in_plane..(i + 1) * c_in * in_plane],
                            &cols,
                            &mut dw,
                            0.0,
                        );
                        dw
                    })
                    .collect();
                let mut dw = vec![0.0; c_in * okk];
                for p in &partials {
                    for (d, v) in dw.iter_mut().zip(p) {
                        *d += v;
                    }
                }
                store.accumulate(w_id, &dw);
            }
            if let Some((b_id, true)) = bias_info {
                let plane = oh * ow;
                let mut db = vec![0.0; c_out];
                for i in 0..n {
                    for c in 0..c_out {
                        let base = (i * c_out + c) * plane;
                        db[c] += gy[base..base + plane].iter().sum::<f64>();
                    }
                }
                store.accumulate(b_id, &db);
            }
        });
    }
    Ok(out)
}
