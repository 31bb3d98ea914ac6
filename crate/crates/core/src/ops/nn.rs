//! Linear layers, pooling, batch normalization, and the classification loss.

use super::matmul::{dgemm, dgemm_a_bt, dgemm_at_b};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// y = x @ w + b with x [N, F], w [F, G], b [G].
pub fn linear(tape: &mut Tape, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::dim(format!(
            "linear: x {xs:?} and w {ws:?} are not [N, F] x [F, G]"
        )));
    }
    let (n, f, g_dim) = (xs[0], xs[1], ws[1]);
    if let Some(b) = b {
        if b.shape() != [g_dim] {
            return Err(Error::dim(format!(
                "linear: bias shape {:?} does not match [{g_dim}]",
                b.shape()
            )));
        }
    }
    let mut data = vec![0.0; n * g_dim];
    dgemm(n, f, g_dim, x.data(), w.data(), &mut data, 0.0);
    if let Some(b) = b {
        for row in data.chunks_mut(g_dim) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    let mut out = Tensor::new(data, &[n, g_dim]);
    let mut tracked: Vec<&Tensor> = vec![x, w];
    if let Some(b) = b {
        tracked.push(b);
    }
    if tape.should_record(&tracked) {
        let (x_id, x_tracks, xd) = (x.id(), x.tracks_grad(), x.data_arc());
        let (w_id, w_tracks, wd) = (w.id(), w.tracks_grad(), w.data_arc());
        let bias_info = b.map(|b| (b.id(), b.tracks_grad()));
        tape.record(&mut out, move |gy, store| {
            if x_tracks {
                let mut dx = vec![0.0; n * f];
                dgemm_a_bt(n, g_dim, f, gy, &wd, &mut dx, 0.0);
                store.accumulate(x_id, &dx);
            }
            if w_tracks {
                let mut dw = vec![0.0; f * g_dim];
                dgemm_at_b(f, n, g_dim, &xd, gy, &mut dw, 0.0);
                store.accumulate(w_id, &dw);
            }
            if let Some((b_id, true)) = bias_info {
                let mut db = vec![0.0; g_dim];
                for row in gy.chunks(g_dim) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                store.accumulate(b_id, &db);
            }
        });
    }
    Ok(out)
}

/// Mean over the spatial plane: [N, C, H, W] -> [N, C].
pub fn global_avg_pool(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("global_avg_pool: expected [N, C, H, W], got {s:?}")));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut data = vec![0.0; n * c];
    for (i, v) in data.iter_mut().enumerate() {
        let base = i * plane;
        *v = x.data()[base..base + plane].iter().sum::<f64>() / plane as f64;
    }
    let mut out = Tensor::new(data, &[n, c]);
    if tape.should_record(&[x]) {
        let x_id = x.id();
        tape.record(&mut out, move |gy, store| {
            let mut dx = vec![0.0; n * c * plane];
            for (i, g) in gy.iter().enumerate() {
                let v = g / plane as f64;
                dx[i * plane..(i + 1) * plane].fill(v);
            }
            store.accumulate(x_id, &dx);
        });
    }
    Ok(out)
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
/// Ties take the first maximum in row-major window order.
pub fn maxpool2d(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[2] < 2 || s[3] < 2 {
        return Err(Error::dim(format!("maxpool2d: expected [N, C, H>=2, W>=2], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut data = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; data.len()];
    for nc in 0..n * c {
        let img = nc * h * w;
        let dst = nc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = img + (2 * oy) * w + 2 * ox;
                let mut best = src[best_idx];
                for (ky, kx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = img + (2 * oy + ky) * w + 2 * ox + kx;
                    if src[idx] > best {
                        best = src[idx];
                        best_idx = idx;
                    }
                }
                data[dst + oy * ow + ox] = best;
                argmax[dst + oy * ow + ox] = best_idx;
            }
        }
    }
    let mut out = Tensor::new(data, &[n, c, oh, ow]);
    if tape.should_record(&[x]) {
        let x_id = x.id();
        let total = n * c * h * w;
        tape.record(&mut out, move |gy, store| {
            let mut dx = vec![0.0; total];
            for (g, &idx) in gy.iter().zip(&argmax) {
                dx[idx] += g;
            }
            store.accumulate(x_id, &dx);
        });
    }
    Ok(out)
}

/// Non-overlapping average pooling by an integer factor; H and W must divide.
pub fn avg_pool2d(tape: &mut Tape, x: &Tensor, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("avg_pool2d: expected [N, C, H, W], got {s:?}")));
    }
    if factor == 0 || s[2] % factor != 0 || s[3] % factor != 0 {
        return Err(Error::dim(format!(
            "avg_pool2d: extents {}x{} not divisible by factor {factor}",
            s[2], s[3]
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let src = x.data();
    let mut data = vec![0.0; n * c * oh * ow];
    for nc in 0..n * c {
        let img = nc * h * w;
        let dst = nc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..factor {
                    let row = img + (oy * factor + ky) * w + ox * factor;
                    for kx in 0..factor {
                        acc += src[row + kx];
                    }
                }
                data[dst + oy * ow + ox] = acc * inv;
            }
        }
    }
    let mut out = Tensor::new(data, &[n, c, oh, ow]);
    if tape.should_record(&[x]) {
        let x_id = x.id();
        tape.record(&mut out, move |gy, store| {
            let mut dx = vec![0.0; n * c * h * w];
            for nc in 0..n * c {
                let img = nc * h * w;
                let gsrc = nc * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let v = gy[gsrc + oy * ow + ox] * inv;
                        for ky in 0..factor {
                            let row = img + (oy * factor + ky) * w + ox * factor;
                            for kx in 0..factor {
                                dx[row + kx] += v;
                            }
                        }
                    }
                }
            }
            store.accumulate(x_id, &dx);
        });
    }
    Ok(out)
}

/// Whether batchnorm normalizes with batch statistics or running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Output of [`batchnorm2d`]. Train mode also reports the batch statistics so
/// the owning layer can fold them into its running estimates.
pub struct BatchNormOut {
    pub output: Tensor,
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
}

/// Per-channel batch normalization over [N, C, H, W].
///
/// Train mode normalizes with the biased batch mean/variance per channel;
/// eval mode uses the supplied running statistics. Both modes then apply the
/// gamma/beta affine and are differentiable w.r.t. x, gamma, and beta.
pub fn batchnorm2d(
    tape: &mut Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    mode: BatchNormMode,
) -> Result<BatchNormOut> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("batchnorm2d: expected [N, C, H, W], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if gamma.shape() != [c] || beta.shape() != [c] || running_mean.len() != c || running_var.len() != c
    {
        return Err(Error::dim(format!(
            "batchnorm2d: gamma {:?} / beta {:?} / running stats ({}, {}) do not match C={c}",
            gamma.shape(),
            beta.shape(),
            running_mean.len(),
            running_var.len()
        )));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let src = x.data();

    let (mean, var) = match mode {
        BatchNormMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut acc = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    acc += src[base..base + plane].iter().sum::<f64>();
                }
                mean[ci] = acc / m;
                let mut sq = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for v in &src[base..base + plane] {
                        let d = v - mean[ci];
                        sq += d * d;
                    }
                }
                var[ci] = sq / m;
            }
            (mean, var)
        }
        BatchNormMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; src.len()];
    let mut data = vec![0.0; src.len()];
    let gam = gamma.data();
    let bet = beta.data();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (mu, is, ga, be) = (mean[ci], inv_std[ci], gam[ci], bet[ci]);
            for j in base..base + plane {
                let xh = (src[j] - mu) * is;
                xhat[j] = xh;
                data[j] = ga * xh + be;
            }
        }
    }

    let mut out = Tensor::new(data, s);
    if tape.should_record(&[x, gamma, beta]) {
        let (x_id, x_tracks) = (x.id(), x.tracks_grad());
        let (g_id, g_tracks, gam) = (gamma.id(), gamma.tracks_grad(), gamma.data_arc());
        let (b_id, b_tracks) = (beta.id(), beta.tracks_grad());
        let xhat_saved = std::sync::Arc::new(xhat);
        let inv_std_saved = inv_std.clone();
        tape.record(&mut out, move |gy, store| {
            let xhat = &xhat_saved;
            if b_tracks {
                let mut db = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        db[ci] += gy[base..base + plane].iter().sum::<f64>();
                    }
                }
                store.accumulate(b_id, &db);
            }
            if g_tracks {
                let mut dg = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        for j in base..base + plane {
                            dg[ci] += gy[j] * xhat[j];
                        }
                    }
                }
                store.accumulate(g_id, &dg);
            }
            if x_tracks {
                let mut dx = vec![0.0; gy.len()];
                match mode {
                    BatchNormMode::Train => {
                        // dx = gamma*inv_std * (g - mean(g) - xhat * mean(g*xhat))
                        for ci in 0..c {
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for ni in 0..n {
                                let base = (ni * c + ci) * plane;
                                for j in base..base + plane {
                                    sum_g += gy[j];
                                    sum_gx += gy[j] * xhat[j];
                                }
                            }
                            let mg = sum_g / m;
                            let mgx = sum_gx / m;
                            let coef = gam[ci] * inv_std_saved[ci];
                            for ni in 0..n {
                                let base = (ni * c + ci) * plane;
                                for j in base..base + plane {
                                    dx[j] = coef * (gy[j] - mg - xhat[j] * mgx);
                                }
                            }
                        }
                    }
                    BatchNormMode::Eval => {
                        for ci in 0..c {
                            let coef = gam[ci] * inv_std_saved[ci];
                            for ni in 0..n {
                                let base = (ni * c + ci) * plane;
                                for j in base..base + plane {
                                    dx[j] = coef * gy[j];
                                }
                            }
                        }
                    }
                }
                store.accumulate(x_id, &dx);
            }
        });
    }
    let (batch_mean, batch_var) = match mode {
        BatchNormMode::Train => (Some(mean), Some(var)),
        BatchNormMode::Eval => (None, None),
    };
    Ok(BatchNormOut { output: out, batch_mean, batch_var })
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
///
/// Stabilized with max subtraction; logits [N, C], labels in [0, C).
pub fn cross_entropy(tape: &mut Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("cross_entropy: logits must be [N, C], got {s:?}")));
    }
    let (n, c) = (s[0], s[1]);
    if labels.len() != n {
        return Err(Error::dim(format!(
            "cross_entropy: {} labels for batch of {n}",
            labels.len()
        )));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::invalid(format!(
                "cross_entropy: label {l} at index {i} out of range [0, {c})"
            )));
        }
    }
    let src = logits.data();
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &src[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    let mut out = Tensor::scalar(loss / n as f64);
    if tape.should_record(&[logits]) {
        let l_id = logits.id();
        let src = logits.data_arc();
        let labels = labels.to_vec();
        tape.record(&mut out, move |gy, store| {
            let scale = gy[0] / n as f64;
            let mut dl = vec![0.0; n * c];
            for (i, &label) in labels.iter().enumerate() {
                let row = &src[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    dl[i * c + j] = e;
                    sum += e;
                }
                for j in 0..c {
                    dl[i * c + j] *= scale / sum;
                }
                dl[i * c + label] -= scale;
            }
            store.accumulate(l_id, &dl);
        });
    }
    Ok(out)
}
