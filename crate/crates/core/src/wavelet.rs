//! Discrete (decimated) and stationary (undecimated) wavelet transforms.
//!
//! Conventions, pinned so golden tests stay meaningful:
//! - Analysis is a strided correlation with periodic (circular) boundary:
//!   approx[i] = sum_k dec_lo[k] * x[(2i + k) mod n], detail analogously.
//! - Synthesis is the exact adjoint, expressed through the reversed
//!   reconstruction filters (rec_lo = reverse(dec_lo)).
//! - Filters are orthonormal (1/sqrt(2)-scaled), so the decimated transform
//!   preserves energy and reconstructs perfectly.
//! - 2D transforms run rows first (filtering along W), then columns. Band
//!   names have the row-pass letter first: LH means low-pass along rows,
//!   high-pass along columns.
//! - The stationary transform is the a-trous scheme: at level j the filters
//!   are dilated by 2^(j-1) and nothing is downsampled, which makes it
//!   exactly equivariant to circular shifts.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Analysis/synthesis filter quadruple for an orthonormal wavelet family.
#[derive(Debug, Clone)]
pub struct WaveletFilterBank {
    name: String,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl WaveletFilterBank {
    /// Derives the full quadruple from a scaling filter: the high-pass is the
    /// quadrature mirror dec_hi[k] = (-1)^k dec_lo[L-1-k], and reconstruction
    /// filters are the time-reversed analysis filters.
    fn from_scaling(name: &str, dec_lo: Vec<f64>) -> WaveletFilterBank {
        let l = dec_lo.len();
        let dec_hi: Vec<f64> = (0..l)
            .map(|k| if k % 2 == 0 { dec_lo[l - 1 - k] } else { -dec_lo[l - 1 - k] })
            .collect();
        let rec_lo: Vec<f64> = dec_lo.iter().rev().copied().collect();
        let rec_hi: Vec<f64> = dec_hi.iter().rev().copied().collect();
        WaveletFilterBank { name: name.to_string(), dec_lo, dec_hi, rec_lo, rec_hi }
    }

    pub fn haar() -> WaveletFilterBank {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        WaveletFilterBank::from_scaling("haar", vec![s, s])
    }

    pub fn db2() -> WaveletFilterBank {
        let r3 = 3.0_f64.sqrt();
        let d = 4.0 * 2.0_f64.sqrt();
        WaveletFilterBank::from_scaling(
            "db2",
            vec![(1.0 + r3) / d, (3.0 + r3) / d, (3.0 - r3) / d, (1.0 - r3) / d],
        )
    }

    pub fn by_name(name: &str) -> Result<WaveletFilterBank> {
        match name {
            "haar" => Ok(WaveletFilterBank::haar()),
            "db2" => Ok(WaveletFilterBank::db2()),
            other => Err(Error::invalid(format!(
                "unknown wavelet {other:?} (bundled: haar, db2)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec_lo.is_empty()
    }
}

/// One analysis step: periodic correlation with stride 2.
pub fn dwt1d(signal: &[f64], bank: &WaveletFilterBank) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n % 2 != 0 {
        return Err(Error::invalid(format!(
            "dwt1d: signal length {n} is odd; pad to an even length first"
        )));
    }
    if n < bank.len() {
        return Err(Error::invalid(format!(
            "dwt1d: signal length {n} shorter than filter length {}",
            bank.len()
        )));
    }
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for i in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (k, (&lo, &hi)) in bank.dec_lo.iter().zip(&bank.dec_hi).enumerate() {
            let v = signal[(2 * i + k) % n];
            a += lo * v;
            d += hi * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
    Ok((approx, detail))
}

/// One synthesis step; exact inverse of [`dwt1d`] for the bundled banks.
pub fn idwt1d(approx: &[f64], detail: &[f64], bank: &WaveletFilterBank) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::invalid(format!(
            "idwt1d: approx length {} != detail length {}",
            approx.len(),
            detail.len()
        )));
    }
    let n = 2 * approx.len();
    if n < bank.len() {
        return Err(Error::invalid(format!(
            "idwt1d: output length {n} shorter than filter length {}",
            bank.len()
        )));
    }
    let l = bank.len();
    let mut signal = vec![0.0; n];
    for i in 0..approx.len() {
        for k in 0..l {
            let idx = (2 * i + k) % n;
            signal[idx] += approx[i] * bank.rec_lo[l - 1 - k] + detail[i] * bank.rec_hi[l - 1 - k];
        }
    }
    Ok(signal)
}

/// Which decomposition a pyramid came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransformKind {
    Dwt,
    Swt,
}

/// Detail planes for one decomposition level, each shaped [C, h_j, w_j].
#[derive(Debug, Clone)]
pub struct LevelPlanes {
    pub level: usize,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Multi-level subband set for one [C, H, W] image: J detail levels plus the
/// final approximation plane. Boundary handling is always periodic.
#[derive(Debug, Clone)]
pub struct SubbandPyramid {
    pub kind: TransformKind,
    pub levels: usize,
    pub channels: usize,
    pub source_shape: (usize, usize),
    pub detail: Vec<LevelPlanes>,
    pub ll: Tensor,
}

fn expect_chw(image: &Tensor) -> Result<(usize, usize, usize)> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("expected [C, H, W] image, got {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

/// Row-pass analysis along the last axis of [C, H, W]: two [C, H, W/2] halves.
fn dwt_rows(x: &[f64], c: usize, h: usize, w: usize, bank: &WaveletFilterBank) -> (Vec<f64>, Vec<f64>) {
    let half = w / 2;
    let mut lo = vec![0.0; c * h * half];
    let mut hi = vec![0.0; c * h * half];
    for row in 0..c * h {
        let src = &x[row * w..(row + 1) * w];
        for i in 0..half {
            let mut a = 0.0;
            let mut d = 0.0;
            for (k, (&fl, &fh)) in bank.dec_lo.iter().zip(&bank.dec_hi).enumerate() {
                let v = src[(2 * i + k) % w];
                a += fl * v;
                d += fh * v;
            }
            lo[row * half + i] = a;
            hi[row * half + i] = d;
        }
    }
    (lo, hi)
}

fn transpose_planes(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..h {
            for z in 0..w {
                out[base + z * h + y] = x[base + y * w + z];
            }
        }
    }
    out
}

/// One 2D analysis level on [C, h, w]: returns (ll, lh, hl, hh), each
/// [C, h/2, w/2].
fn dwt2d_level(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    bank: &WaveletFilterBank,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (row_lo, row_hi) = dwt_rows(x, c, h, w, bank);
    let w2 = w / 2;
    // Column pass = transpose, row pass, transpose back.
    let split = |planes: &[f64]| {
        let t = transpose_planes(planes, c, h, w2);
        let (lo, hi) = dwt_rows(&t, c, w2, h, bank);
        (
            transpose_planes(&lo, c, w2, h / 2),
            transpose_planes(&hi, c, w2, h / 2),
        )
    };
    let (ll, lh) = split(&row_lo);
    let (hl, hh) = split(&row_hi);
    (ll, lh, hl, hh)
}

/// Multi-level decimated 2D transform; H and W must divide by 2^levels.
pub fn dwt2d(image: &Tensor, bank: &WaveletFilterBank, levels: usize) -> Result<SubbandPyramid> {
    let (c, h, w) = expect_chw(image)?;
    if levels == 0 {
        return Err(Error::invalid("dwt2d: levels must be >= 1".to_string()));
    }
    let div = 1usize << levels;
    if h % div != 0 || w % div != 0 {
        return Err(Error::invalid(format!(
            "dwt2d: image extents {h}x{w} must be divisible by 2^{levels} = {div}"
        )));
    }
    let mut detail = Vec::with_capacity(levels);
    let mut cur = image.data().to_vec();
    let (mut ch, mut cw) = (h, w);
    for level in 1..=levels {
        if ch < bank.len() || cw < bank.len() {
            return Err(Error::invalid(format!(
                "dwt2d: level {level} extent {ch}x{cw} shorter than filter length {}",
                bank.len()
            )));
        }
        let (ll, lh, hl, hh) = dwt2d_level(&cur, c, ch, cw, bank);
        ch /= 2;
        cw /= 2;
        detail.push(LevelPlanes {
            level,
            lh: Tensor::new(lh, &[c, ch, cw]),
            hl: Tensor::new(hl, &[c, ch, cw]),
            hh: Tensor::new(hh, &[c, ch, cw]),
        });
        cur = ll;
    }
    Ok(SubbandPyramid {
        kind: TransformKind::Dwt,
        levels,
        channels: c,
        source_shape: (h, w),
        detail,
        ll: Tensor::new(cur, &[c, h / div, w / div]),
    })
}

/// Row-pass synthesis: adjoint scatter of [`dwt_rows`].
fn idwt_rows(lo: &[f64], hi: &[f64], c: usize, h: usize, half: usize, bank: &WaveletFilterBank) -> Vec<f64> {
    let w = half * 2;
    let l = bank.len();
    let mut out = vec![0.0; c * h * w];
    for row in 0..c * h {
        let dst = &mut out[row * w..(row + 1) * w];
        for i in 0..half {
            let a = lo[row * half + i];
            let d = hi[row * half + i];
            for k in 0..l {
                dst[(2 * i + k) % w] += a * bank.rec_lo[l - 1 - k] + d * bank.rec_hi[l - 1 - k];
            }
        }
    }
    out
}

fn idwt2d_level(
    ll: &[f64],
    lh: &[f64],
    hl: &[f64],
    hh: &[f64],
    c: usize,
    h2: usize,
    w2: usize,
    bank: &WaveletFilterBank,
) -> Vec<f64> {
    // Invert the column pass first, recovering the row-pass halves.
    let merge = |lo_p: &[f64], hi_p: &[f64]| {
        let lo_t = transpose_planes(lo_p, c, h2, w2);
        let hi_t = transpose_planes(hi_p, c, h2, w2);
        let t = idwt_rows(&lo_t, &hi_t, c, w2, h2, bank);
        transpose_planes(&t, c, w2, 2 * h2)
    };
    let row_lo = merge(ll, lh);
    let row_hi = merge(hl, hh);
    idwt_rows(&row_lo, &row_hi, c, 2 * h2, w2, bank)
}

/// Inverse of [`dwt2d`].
pub fn idwt2d(pyramid: &SubbandPyramid, bank: &WaveletFilterBank) -> Result<Tensor> {
    if pyramid.kind != TransformKind::Dwt {
        return Err(Error::invalid("idwt2d: pyramid is not a DWT decomposition".to_string()));
    }
    let c = pyramid.channels;
    let mut cur = pyramid.ll.data().to_vec();
    let (mut ch, mut cw) = (pyramid.ll.shape()[1], pyramid.ll.shape()[2]);
    for planes in pyramid.detail.iter().rev() {
        if planes.lh.shape() != [c, ch, cw] {
            return Err(Error::dim(format!(
                "idwt2d: level {} planes have shape {:?}, expected [{c}, {ch}, {cw}]",
                planes.level,
                planes.lh.shape()
            )));
        }
        cur = idwt2d_level(
            &cur,
            planes.lh.data(),
            planes.hl.data(),
            planes.hh.data(),
            c,
            ch,
            cw,
            bank,
        );
        ch *= 2;
        cw *= 2;
    }
    if (ch, cw) != pyramid.source_shape {
        return Err(Error::dim(format!(
            "idwt2d: reconstructed {ch}x{cw} does not match source {:?}",
            pyramid.source_shape
        )));
    }
    Ok(Tensor::new(cur, &[c, ch, cw]))
}

/// A-trous row pass with dilation `d`: full-width lo/hi outputs.
fn swt_rows(x: &[f64], c: usize, h: usize, w: usize, d: usize, bank: &WaveletFilterBank) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; c * h * w];
    let mut hi = vec![0.0; c * h * w];
    for row in 0..c * h {
        let src = &x[row * w..(row + 1) * w];
        for m in 0..w {
            let mut a = 0.0;
            let mut dv = 0.0;
            for (k, (&fl, &fh)) in bank.dec_lo.iter().zip(&bank.dec_hi).enumerate() {
                let v = src[(m + k * d) % w];
                a += fl * v;
                dv += fh * v;
            }
            lo[row * w + m] = a;
            hi[row * w + m] = dv;
        }
    }
    (lo, hi)
}

/// Undecimated (stationary) 2D transform: every plane keeps the source
/// extent, and the whole decomposition commutes with circular shifts.
pub fn swt2d(image: &Tensor, bank: &WaveletFilterBank, levels: usize) -> Result<SubbandPyramid> {
    let (c, h, w) = expect_chw(image)?;
    if levels == 0 {
        return Err(Error::invalid("swt2d: levels must be >= 1".to_string()));
    }
    let max_dilated = (bank.len() - 1) * (1usize << (levels - 1)) + 1;
    if h < max_dilated || w < max_dilated {
        return Err(Error::invalid(format!(
            "swt2d: image extents {h}x{w} smaller than the level-{levels} dilated filter length {max_dilated}"
        )));
    }
    let mut detail = Vec::with_capacity(levels);
    let mut cur = image.data().to_vec();
    for level in 1..=levels {
        let d = 1usize << (level - 1);
        let (row_lo, row_hi) = swt_rows(&cur, c, h, w, d, bank);
        let split = |planes: &[f64]| {
            let t = transpose_planes(planes, c, h, w);
            let (lo, hi) = swt_rows(&t, c, w, h, d, bank);
            (transpose_planes(&lo, c, w, h), transpose_planes(&hi, c, w, h))
        };
        let (ll, lh) = split(&row_lo);
        let (hl, hh) = split(&row_hi);
        detail.push(LevelPlanes {
            level,
            lh: Tensor::new(lh, &[c, h, w]),
            hl: Tensor::new(hl, &[c, h, w]),
            hh: Tensor::new(hh, &[c, h, w]),
        });
        cur = ll;
    }
    Ok(SubbandPyramid {
        kind: TransformKind::Swt,
        levels,
        channels: c,
        source_shape: (h, w),
        detail,
        ll: Tensor::new(cur, &[c, h, w]),
    })
}

/// A-trous row-pass adjoint: scatter of [`swt_rows`].
fn swt_rows_adjoint(
    g_lo: &[f64],
    g_hi: &[f64],
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    bank: &WaveletFilterBank,
) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for row in 0..c * h {
        let dst = &mut out[row * w..(row + 1) * w];
        for m in 0..w {
            let gl = g_lo[row * w + m];
            let gh = g_hi[row * w + m];
            for (k, (&fl, &fh)) in bank.dec_lo.iter().zip(&bank.dec_hi).enumerate() {
                dst[(m + k * d) % w] += fl * gl + fh * gh;
            }
        }
    }
    out
}

/// Adjoint of "swt2d to `levels` keeping only the final level's planes".
///
/// Maps cotangents of (ll_J, lh_J, hl_J, hh_J) back to the source image;
/// detail planes of shallower levels were discarded, so they contribute
/// nothing. This is what makes the fusion branch differentiable end to end.
pub fn swt2d_final_level_adjoint(
    g_ll: &Tensor,
    g_lh: &Tensor,
    g_hl: &Tensor,
    g_hh: &Tensor,
    bank: &WaveletFilterBank,
    levels: usize,
) -> Result<Tensor> {
    let (c, h, w) = expect_chw(g_ll)?;
    for t in [g_lh, g_hl, g_hh] {
        if t.shape() != [c, h, w] {
            return Err(Error::dim(format!(
                "swt adjoint: plane shape {:?} != [{c}, {h}, {w}]",
                t.shape()
            )));
        }
    }
    let zeros = vec![0.0; c * h * w];
    let mut carry = g_ll.data().to_vec();
    for level in (1..=levels).rev() {
        let d = 1usize << (level - 1);
        let (glh, ghl, ghh): (&[f64], &[f64], &[f64]) = if level == levels {
            (g_lh.data(), g_hl.data(), g_hh.data())
        } else {
            (&zeros, &zeros, &zeros)
        };
        // invert the column pass adjoint for the lo and hi row halves
        let col_adjoint = |g_low: &[f64], g_high: &[f64]| {
            let lo_t = transpose_planes(g_low, c, h, w);
            let hi_t = transpose_planes(g_high, c, h, w);
            let t = swt_rows_adjoint(&lo_t, &hi_t, c, w, h, d, bank);
            transpose_planes(&t, c, w, h)
        };
        let g_row_lo = col_adjoint(&carry, glh);
        let g_row_hi = col_adjoint(ghl, ghh);
        carry = swt_rows_adjoint(&g_row_lo, &g_row_hi, c, h, w, d, bank);
    }
    Ok(Tensor::new(carry, &[c, h, w]))
}

#[derive(Serialize)]
struct DumpPlane {
    file: String,
    channel: usize,
    level: usize,
    band: String,
    shape: [usize; 2],
}

#[derive(Serialize)]
struct DumpSidecar {
    kind: TransformKind,
    wavelet: String,
    levels: usize,
    channels: usize,
    source_shape: [usize; 2],
    planes: Vec<DumpPlane>,
}

/// Writes one raw little-endian f32 file per plane, named
/// `<channel>_<level>_<band>.f32`, plus a `subbands.json` sidecar with shapes.
pub fn write_subband_dump(pyramid: &SubbandPyramid, bank_name: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut planes = Vec::new();
    let mut write_plane = |tensor: &Tensor, channel: usize, level: usize, band: &str| -> Result<()> {
        let (h, w) = (tensor.shape()[1], tensor.shape()[2]);
        let file = format!("{channel}_{level}_{band}.f32");
        let mut f = std::fs::File::create(dir.join(&file))?;
        let plane = &tensor.data()[channel * h * w..(channel + 1) * h * w];
        let mut bytes = Vec::with_capacity(plane.len() * 4);
        for v in plane {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        f.write_all(&bytes)?;
        planes.push(DumpPlane {
            file,
            channel,
            level,
            band: band.to_string(),
            shape: [h, w],
        });
        Ok(())
    };
    for channel in 0..pyramid.channels {
        for level_planes in &pyramid.detail {
            write_plane(&level_planes.lh, channel, level_planes.level, "LH")?;
            write_plane(&level_planes.hl, channel, level_planes.level, "HL")?;
            write_plane(&level_planes.hh, channel, level_planes.level, "HH")?;
        }
        write_plane(&pyramid.ll, channel, pyramid.levels, "LL")?;
    }
    let sidecar = DumpSidecar {
        kind: pyramid.kind,
        wavelet: bank_name.to_string(),
        levels: pyramid.levels,
        channels: pyramid.channels,
        source_shape: [pyramid.source_shape.0, pyramid.source_shape.1],
        planes,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::invalid(format!("sidecar serialization: {e}")))?;
    std::fs::write(dir.join("subbands.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn bank_invariants() {
        for bank in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let norm_lo: f64 = bank.dec_lo.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm_hi: f64 = bank.dec_hi.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm_lo - 1.0).abs() <= 1e-12, "{}", bank.name());
            assert!((norm_hi - 1.0).abs() <= 1e-12, "{}", bank.name());
            let l = bank.len();
            for k in 0..l {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(bank.dec_hi[k], sign * bank.dec_lo[l - 1 - k]);
            }
        }
        assert!(WaveletFilterBank::by_name("sym4").is_err());
    }

    #[test]
    fn dwt1d_constant_kills_detail() {
        let bank = WaveletFilterBank::haar();
        let (a, d) = dwt1d(&[1.0, 1.0, 1.0, 1.0], &bank).unwrap();
        let s = 2.0_f64.sqrt();
        for v in &a {
            assert!((v - s).abs() <= 1e-15);
        }
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn dwt1d_haar_golden_values() {
        let bank = WaveletFilterBank::haar();
        let (a, d) = dwt1d(&[1.0, 2.0, 3.0, 4.0], &bank).unwrap();
        let s = 2.0_f64.sqrt();
        assert!((a[0] - 3.0 / s).abs() <= 1e-12);
        assert!((a[1] - 7.0 / s).abs() <= 1e-12);
        assert!((d[0] + 1.0 / s).abs() <= 1e-12);
        assert!((d[1] + 1.0 / s).abs() <= 1e-12);
    }

    #[test]
    fn dwt1d_rejects_odd_length() {
        let err = dwt1d(&[1.0, 2.0, 3.0], &WaveletFilterBank::haar()).unwrap_err();
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn db2_preserves_energy() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let bank = WaveletFilterBank::db2();
        let x = rand_vec(&mut rng, 16);
        let (a, d) = dwt1d(&x, &bank).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = a.iter().chain(&d).map(|v| v * v).sum();
        assert!((ex - ec).abs() <= 1e-10 * ex.max(1.0));
    }

    #[test]
    fn idwt1d_inverts_constant_case() {
        let bank = WaveletFilterBank::haar();
        let s = 2.0_f64.sqrt();
        let x = idwt1d(&[s, s], &[0.0, 0.0], &bank).unwrap();
        for v in &x {
            assert!((v - 1.0).abs() <= 1e-15);
        }
        // linearity: zero in, zero out
        let z = idwt1d(&[0.0, 0.0], &[0.0, 0.0], &bank).unwrap();
        assert_eq!(z, vec![0.0; 4]);
        assert!(idwt1d(&[0.0], &[0.0, 0.0], &bank).is_err());
    }

    #[test]
    fn roundtrip_1d_both_banks() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        for bank in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let x = rand_vec(&mut rng, 32);
            let (a, d) = dwt1d(&x, &bank).unwrap();
            let back = idwt1d(&a, &d, &bank).unwrap();
            let err = x
                .iter()
                .zip(&back)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-10, "{}: {err}", bank.name());
        }
    }

    #[test]
    fn dwt2d_constant_image() {
        let bank = WaveletFilterBank::haar();
        let c = 0.7;
        let img = Tensor::full(&[2, 8, 8], c);
        let p = dwt2d(&img, &bank, 1).unwrap();
        for v in p.ll.data() {
            assert!((v - 2.0 * c).abs() <= 1e-14);
        }
        for planes in &p.detail {
            for t in [&planes.lh, &planes.hl, &planes.hh] {
                for v in t.data() {
                    assert!(v.abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn dwt2d_roundtrip_and_energy() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let img = Tensor::new(rand_vec(&mut rng, 3 * 16 * 16), &[3, 16, 16]);
        for bank in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let p = dwt2d(&img, &bank, 2).unwrap();
            let back = idwt2d(&p, &bank).unwrap();
            assert!(img.max_abs_diff(&back) <= 1e-10, "{}", bank.name());

            let ex: f64 = img.data().iter().map(|v| v * v).sum();
            let mut ec: f64 = p.ll.data().iter().map(|v| v * v).sum();
            for planes in &p.detail {
                for t in [&planes.lh, &planes.hl, &planes.hh] {
                    ec += t.data().iter().map(|v| v * v).sum::<f64>();
                }
            }
            assert!((ex - ec).abs() <= 1e-9 * ex.max(1.0), "{}", bank.name());
        }
    }

    #[test]
    fn dwt2d_validates_divisibility() {
        let img = Tensor::zeros(&[1, 12, 12]);
        let err = dwt2d(&img, &WaveletFilterBank::haar(), 3).unwrap_err();
        assert!(err.to_string().contains("2^3 = 8"), "{err}");
    }

    #[test]
    fn dwt_coefficient_count_matches_source() {
        let img = Tensor::zeros(&[1, 16, 16]);
        let p = dwt2d(&img, &WaveletFilterBank::haar(), 2).unwrap();
        let mut count = p.ll.numel();
        for planes in &p.detail {
            count += planes.lh.numel() + planes.hl.numel() + planes.hh.numel();
        }
        assert_eq!(count, 16 * 16);
    }

    fn shift2d(img: &Tensor, dy: usize, dx: usize) -> Tensor {
        let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let mut out = vec![0.0; img.numel()];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ci * h + (y + dy) % h) * w + (x + dx) % w] =
                        img.data()[(ci * h + y) * w + x];
                }
            }
        }
        Tensor::new(out, img.shape())
    }

    #[test]
    fn swt_constant_image() {
        let bank = WaveletFilterBank::haar();
        let img = Tensor::full(&[1, 8, 8], 0.3);
        let p = swt2d(&img, &bank, 1).unwrap();
        for v in p.ll.data() {
            assert!((v - 0.6).abs() <= 1e-14);
        }
        for t in [&p.detail[0].lh, &p.detail[0].hl, &p.detail[0].hh] {
            for v in t.data() {
                assert!(v.abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn swt_shift_equivariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let img = Tensor::new(rand_vec(&mut rng, 64), &[1, 8, 8]);
        for bank in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let p = swt2d(&img, &bank, 2).unwrap();
            let ps = swt2d(&shift2d(&img, 3, 5), &bank, 2).unwrap();
            let pairs = [
                (&p.ll, &ps.ll),
                (&p.detail[0].lh, &ps.detail[0].lh),
                (&p.detail[0].hl, &ps.detail[0].hl),
                (&p.detail[0].hh, &ps.detail[0].hh),
                (&p.detail[1].hh, &ps.detail[1].hh),
            ];
            for (orig, shifted) in pairs {
                let expect = shift2d(orig, 3, 5);
                assert!(expect.max_abs_diff(shifted) <= 1e-12, "{}", bank.name());
            }
        }
    }

    #[test]
    fn swt_decimated_equals_dwt_at_level_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let img = Tensor::new(rand_vec(&mut rng, 2 * 8 * 8), &[2, 8, 8]);
        for bank in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let dwt = dwt2d(&img, &bank, 1).unwrap();
            let swt = swt2d(&img, &bank, 1).unwrap();
            let pick = |full: &Tensor| {
                let (c, h, w) = (full.shape()[0], full.shape()[1], full.shape()[2]);
                let mut out = vec![0.0; c * (h / 2) * (w / 2)];
                for ci in 0..c {
                    for y in 0..h / 2 {
                        for x in 0..w / 2 {
                            out[(ci * (h / 2) + y) * (w / 2) + x] =
                                full.data()[(ci * h + 2 * y) * w + 2 * x];
                        }
                    }
                }
                Tensor::new(out, &[c, h / 2, w / 2])
            };
            assert!(pick(&swt.ll).max_abs_diff(&dwt.ll) <= 1e-12);
            assert!(pick(&swt.detail[0].lh).max_abs_diff(&dwt.detail[0].lh) <= 1e-12);
            assert!(pick(&swt.detail[0].hl).max_abs_diff(&dwt.detail[0].hl) <= 1e-12);
            assert!(pick(&swt.detail[0].hh).max_abs_diff(&dwt.detail[0].hh) <= 1e-12);
        }
    }

    #[test]
    fn swt_rejects_small_images() {
        let img = Tensor::zeros(&[1, 4, 4]);
        assert!(swt2d(&img, &WaveletFilterBank::db2(), 2).is_err());
    }

    #[test]
    fn swt_final_level_adjoint_satisfies_dot_identity() {
        // <A(x), y> == <x, A^T(y)> where A keeps only the final-level planes.
        let mut rng = ChaCha20Rng::seed_from_u64(26);
        for bank in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            for levels in [1usize, 2] {
                let x = Tensor::new(rand_vec(&mut rng, 2 * 16 * 16), &[2, 16, 16]);
                let p = swt2d(&x, &bank, levels).unwrap();
                let last = p.detail.last().unwrap();
                let ys: Vec<Tensor> = (0..4)
                    .map(|_| Tensor::new(rand_vec(&mut rng, 2 * 16 * 16), &[2, 16, 16]))
                    .collect();
                let lhs: f64 = [&p.ll, &last.lh, &last.hl, &last.hh]
                    .iter()
                    .zip(&ys)
                    .map(|(plane, y)| {
                        plane.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .sum();
                let back =
                    swt2d_final_level_adjoint(&ys[0], &ys[1], &ys[2], &ys[3], &bank, levels)
                        .unwrap();
                let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                    "{} levels {levels}: {lhs} vs {rhs}",
                    bank.name()
                );
            }
        }
    }
}
