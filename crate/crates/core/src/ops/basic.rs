//! Elementwise ops, activations, softmax, concat, and small reductions.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// out = a + b (same shape).
pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "add: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    let mut out = Tensor::new(data, a.shape());
    if tape.should_record(&[a, b]) {
        let (a_id, a_tracks) = (a.id(), a.tracks_grad());
        let (b_id, b_tracks) = (b.id(), b.tracks_grad());
        tape.record(&mut out, move |g, store| {
            if a_tracks {
                store.accumulate(a_id, g);
            }
            if b_tracks {
                store.accumulate(b_id, g);
            }
        });
    }
    Ok(out)
}

/// out = factor * a.
pub fn scale(tape: &mut Tape, a: &Tensor, factor: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|x| factor * x).collect();
    let mut out = Tensor::new(data, a.shape());
    if tape.should_record(&[a]) {
        let a_id = a.id();
        tape.record(&mut out, move |g, store| {
            let d: Vec<f64> = g.iter().map(|v| factor * v).collect();
            store.accumulate(a_id, &d);
        });
    }
    out
}

/// Scalar sum of all elements.
pub fn sum_all(tape: &mut Tape, a: &Tensor) -> Tensor {
    let mut out = Tensor::scalar(a.data().iter().sum());
    if tape.should_record(&[a]) {
        let a_id = a.id();
        let n = a.numel();
        tape.record(&mut out, move |g, store| {
            store.accumulate(a_id, &vec![g[0]; n]);
        });
    }
    out
}

/// Scalar inner product of two same-shape tensors.
pub fn dot(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "dot: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum());
    if tape.should_record(&[a, b]) {
        let (a_id, a_tracks, a_data) = (a.id(), a.tracks_grad(), a.data_arc());
        let (b_id, b_tracks, b_data) = (b.id(), b.tracks_grad(), b.data_arc());
        tape.record(&mut out, move |g, store| {
            if a_tracks {
                let d: Vec<f64> = b_data.iter().map(|v| g[0] * v).collect();
                store.accumulate(a_id, &d);
            }
            if b_tracks {
                let d: Vec<f64> = a_data.iter().map(|v| g[0] * v).collect();
                store.accumulate(b_id, &d);
            }
        });
    }
    Ok(out)
}

/// Mean squared error between two same-shape tensors, as a scalar.
pub fn mse(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "mse: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.numel() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let mut out = Tensor::scalar(sum / n);
    if tape.should_record(&[a, b]) {
        let (a_id, a_tracks, a_data) = (a.id(), a.tracks_grad(), a.data_arc());
        let (b_id, b_tracks, b_data) = (b.id(), b.tracks_grad(), b.data_arc());
        tape.record(&mut out, move |g, store| {
            let c = 2.0 * g[0] / n;
            if a_tracks {
                let d: Vec<f64> = a_data.iter().zip(b_data.iter()).map(|(x, y)| c * (x - y)).collect();
                store.accumulate(a_id, &d);
            }
            if b_tracks {
                let d: Vec<f64> = a_data.iter().zip(b_data.iter()).map(|(x, y)| -c * (x - y)).collect();
                store.accumulate(b_id, &d);
            }
        });
    }
    Ok(out)
}

pub fn relu(tape: &mut Tape, x: &Tensor) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    let mut out = Tensor::new(data, x.shape());
    if tape.should_record(&[x]) {
        let x_id = x.id();
        let x_data = x.data_arc();
        tape.record(&mut out, move |g, store| {
            let d: Vec<f64> = g
                .iter()
                .zip(x_data.iter())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            store.accumulate(x_id, &d);
        });
    }
    out
}

pub fn sigmoid(tape: &mut Tape, x: &Tensor) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    let mut out = Tensor::new(data, x.shape());
    if tape.should_record(&[x]) {
        let x_id = x.id();
        let y = out.data_arc();
        tape.record(&mut out, move |g, store| {
            let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, y)| g * y * (1.0 - y)).collect();
            store.accumulate(x_id, &d);
        });
    }
    out
}

/// Softmax along `axis`; every slice along that axis sums to 1.
pub fn softmax(tape: &mut Tape, x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.shape().len() {
        return Err(Error::dim(format!(
            "softmax: axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let len = x.shape()[axis];
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let src = x.data();
    let mut data = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(src[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = (src[base + j * inner] - max).exp();
                data[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                data[base + j * inner] /= sum;
            }
        }
    }
    let mut out = Tensor::new(data, x.shape());
    if tape.should_record(&[x]) {
        let x_id = x.id();
        let y = out.data_arc();
        tape.record(&mut out, move |g, store| {
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0;
                    for j in 0..len {
                        let idx = base + j * inner;
                        dot += g[idx] * y[idx];
                    }
                    for j in 0..len {
                        let idx = base + j * inner;
                        d[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            store.accumulate(x_id, &d);
        });
    }
    Ok(out)
}

/// Same buffer viewed under a new shape (element count preserved).
pub fn reshape(tape: &mut Tape, x: &Tensor, shape: &[usize]) -> Tensor {
    let mut out = x.reshaped(shape);
    if tape.should_record(&[x]) {
        let x_id = x.id();
        tape.record(&mut out, move |g, store| {
            store.accumulate(x_id, g);
        });
    }
    out
}

/// Concatenates [N, Ci, H, W] tensors along the channel axis.
pub fn concat_channels(tape: &mut Tape, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::dim("concat_channels: no inputs".to_string()));
    }
    let first = inputs[0].shape();
    if first.len() != 4 {
        return Err(Error::dim(format!(
            "concat_channels: input 0 has rank {} (expected 4)",
            first.len()
        )));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut total_c = 0;
    for (idx, t) in inputs.iter().enumerate() {
        let s = t.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(Error::dim(format!(
                "concat_channels: input {idx} has shape {s:?}, expected [{n}, _, {h}, {w}]"
            )));
        }
        total_c += s[1];
    }
    let plane = h * w;
    let mut data = vec![0.0; n * total_c * plane];
    for s in 0..n {
        let mut c_off = 0;
        for t in inputs {
            let c = t.shape()[1];
            let src = &t.data()[s * c * plane..(s + 1) * c * plane];
            let dst = (s * total_c + c_off) * plane;
            data[dst..dst + c * plane].copy_from_slice(src);
            c_off += c;
        }
    }
    let mut out = Tensor::new(data, &[n, total_c, h, w]);
    if tape.should_record(inputs) {
        let specs: Vec<(u64, bool, usize)> =
            inputs.iter().map(|t| (t.id(), t.tracks_grad(), t.shape()[1])).collect();
        tape.record(&mut out, move |g, store| {
            let mut c_off = 0;
            for &(id, tracks, c) in &specs {
                if tracks {
                    let mut d = vec![0.0; n * c * plane];
                    for s in 0..n {
                        let src = (s * total_c + c_off) * plane;
                        let dst = s * c * plane;
                        d[dst..dst + c * plane].copy_from_slice(&g[src..src + c * plane]);
                    }
                    store.accumulate(id, &d);
                }
                c_off += c;
            }
        });
    }
    Ok(out)
}

/// Copies channels [start, end) of an [N, C, H, W] tensor.
pub fn slice_channels(tape: &mut Tape, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || start >= end || end > s[1] {
        return Err(Error::dim(format!(
            "slice_channels: range {start}..{end} invalid for shape {s:?}"
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let cs = end - start;
    let plane = h * w;
    let mut data = vec![0.0; n * cs * plane];
    for i in 0..n {
        let src = (i * c + start) * plane;
        let dst = i * cs * plane;
        data[dst..dst + cs * plane].copy_from_slice(&x.data()[src..src + cs * plane]);
    }
    let mut out = Tensor::new(data, &[n, cs, h, w]);
    if tape.should_record(&[x]) {
        let x_id = x.id();
        tape.record(&mut out, move |g, store| {
            let mut d = vec![0.0; n * c * plane];
            for i in 0..n {
                let dst = (i * c + start) * plane;
                let src = i * cs * plane;
                d[dst..dst + cs * plane].copy_from_slice(&g[src..src + cs * plane]);
            }
            store.accumulate(x_id, &d);
        });
    }
    Ok(out)
}
