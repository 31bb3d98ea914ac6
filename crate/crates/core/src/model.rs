//! The end-to-end network: residual encoder, OGA re-weighting, channel-wise
//! wavelet fusion, transposed-conv decoder, and the classifier head that
//! consumes the reconstructed image.
//!
//! Channel arithmetic is explicit: the fused tensor carries the OGA output
//! plus four decimated and four stationary wavelet planes per input channel,
//! all at the bottleneck grid. The wavelet level count equals the number of
//! stride-2 encoder stages, so level-J DWT planes land on the bottleneck
//! natively and SWT planes are average-pooled down to it.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::oga::{OgaBlock, OgaConfig};
use crate::ops::{self, BatchNormMode};
use crate::tape::Tape;
use crate::tensor::{Parameter, Tensor};
use crate::wavelet::{dwt2d, swt2d, WaveletFilterBank};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;
const HEAD_WIDTHS: [usize; 2] = [16, 32];
const PLANE_STD_EPS: f64 = 1e-6;

/// Training vs evaluation behavior (batch statistics vs running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    fn bn(self) -> BatchNormMode {
        match self {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval,
        }
    }
}

/// Architecture hyperparameters. `wavelet_levels` is derived: it equals the
/// number of encoder stages so the subband grids match the bottleneck.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub encoder_widths: Vec<usize>,
    pub wavelet_bank: String,
    pub oga: OgaConfig,
    pub recon_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            image_size: 256,
            in_channels: 3,
            num_classes: 10,
            encoder_widths: vec![16, 32, 64, 128],
            wavelet_bank: "haar".to_string(),
            oga: OgaConfig {
                c_in: 128,
                c_out: 128,
                kernel_size: 3,
                num_kernels: 4,
                reduction_ratio: 4,
            },
            recon_loss_weight: 0.0,
        }
    }
}

impl ModelConfig {
    /// A small configuration for fast tests: 64x64 input, narrow widths.
    pub fn test_default() -> ModelConfig {
        ModelConfig {
            image_size: 64,
            encoder_widths: vec![16, 32, 64, 128],
            ..ModelConfig::default()
        }
    }

    pub fn encoder_downsamples(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn wavelet_levels(&self) -> usize {
        self.encoder_downsamples()
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.encoder_downsamples()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels must be positive".to_string()));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::invalid(format!(
                "encoder_widths {:?} must be non-empty and positive",
                self.encoder_widths
            )));
        }
        let stages = self.encoder_downsamples();
        let div = 1usize << stages;
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(Error::invalid(format!(
                "image_size {} must be divisible by 2^{stages} = {div}",
                self.image_size
            )));
        }
        if self.bottleneck_size() == 0 {
            return Err(Error::invalid(format!(
                "image_size {} collapses to nothing after {stages} downsamples",
                self.image_size
            )));
        }
        if self.image_size < 4 {
            return Err(Error::invalid(
                "image_size must be >= 4 for the classifier head".to_string(),
            ));
        }
        self.oga.validate()?;
        let last = *self.encoder_widths.last().unwrap();
        if self.oga.c_in != last {
            return Err(Error::invalid(format!(
                "oga.c_in {} must equal the last encoder width {last}",
                self.oga.c_in
            )));
        }
        if self.recon_loss_weight < 0.0 {
            return Err(Error::invalid("recon_loss_weight must be >= 0".to_string()));
        }
        let bank = WaveletFilterBank::by_name(&self.wavelet_bank)?;
        let dilated = (bank.len() - 1) * (1usize << (self.wavelet_levels() - 1)) + 1;
        if self.image_size < dilated {
            return Err(Error::invalid(format!(
                "image_size {} smaller than the level-{} dilated {} filter length {dilated}",
                self.image_size,
                self.wavelet_levels(),
                self.wavelet_bank
            )));
        }
        Ok(())
    }

    pub fn fusion_plan(&self) -> FusionPlan {
        FusionPlan {
            encoder_channels: self.oga.c_out,
            dwt_channels: self.in_channels * 4,
            swt_channels: self.in_channels * 4,
        }
    }
}

/// Channel bookkeeping for the fusion concat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionPlan {
    pub encoder_channels: usize,
    pub dwt_channels: usize,
    pub swt_channels: usize,
}

impl FusionPlan {
    pub fn fused_channels(&self) -> usize {
        self.encoder_channels + self.dwt_channels + self.swt_channels
    }
}

impl std::fmt::Display for FusionPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "FusionPlan {{ encoder: {}, dwt: {}, swt: {}, fused: {} }}",
            self.encoder_channels,
            self.dwt_channels,
            self.swt_channels,
            self.fused_channels()
        )
    }
}

#[derive(Debug, Clone)]
struct Conv2dLayer {
    weight: Parameter,
    bias: Option<Parameter>,
    stride: usize,
    padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    fn new(
        rng: &mut ChaCha20Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Conv2dLayer {
        Conv2dLayer {
            weight: init::kaiming_uniform(
                rng,
                format!("{prefix}.weight"),
                &[c_out, c_in, k, k],
                c_in * k * k,
            ),
            bias: bias.then(|| init::zeros(format!("{prefix}.bias"), &[c_out])),
            stride,
            padding,
        }
    }

    fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(
            tape,
            x,
            &self.weight.tensor,
            self.bias.as_ref().map(|b| &b.tensor),
            self.stride,
            self.padding,
        )
    }
}

#[derive(Debug, Clone)]
struct TConv2dLayer {
    weight: Parameter,
    stride: usize,
}

impl TConv2dLayer {
    /// k = stride so the output is an exact integer upsample and the layer is
    /// the adjoint of a stride-`stride` convolution.
    fn new(rng: &mut ChaCha20Rng, prefix: &str, c_in: usize, c_out: usize, stride: usize) -> TConv2dLayer {
        TConv2dLayer {
            weight: init::kaiming_uniform(
                rng,
                format!("{prefix}.weight"),
                &[c_in, c_out, stride, stride],
                c_in * stride * stride,
            ),
            stride,
        }
    }

    fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        ops::transposed_conv2d(tape, x, &self.weight.tensor, None, self.stride, 0)
    }
}

#[derive(Debug, Clone)]
struct BatchNorm2dLayer {
    gamma: Parameter,
    beta: Parameter,
    prefix: String,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl BatchNorm2dLayer {
    fn new(prefix: &str, channels: usize) -> BatchNorm2dLayer {
        BatchNorm2dLayer {
            gamma: init::ones(format!("{prefix}.gamma"), &[channels]),
            beta: init::zeros(format!("{prefix}.beta"), &[channels]),
            prefix: prefix.to_string(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn forward(&mut self, tape: &mut Tape, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let out = ops::batchnorm2d(
            tape,
            x,
            &self.gamma.tensor,
            &self.beta.tensor,
            &self.running_mean,
            &self.running_var,
            BN_EPS,
            mode.bn(),
        )?;
        if let (Some(mean), Some(var)) = (out.batch_mean, out.batch_var) {
            for (r, b) in self.running_mean.iter_mut().zip(&mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            for (r, b) in self.running_var.iter_mut().zip(&var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
        Ok(out.output)
    }
}

#[derive(Debug, Clone)]
struct LinearLayer {
    weight: Parameter,
    bias: Parameter,
}

impl LinearLayer {
    fn new(rng: &mut ChaCha20Rng, prefix: &str, f_in: usize, f_out: usize) -> LinearLayer {
        LinearLayer {
            weight: init::kaiming_uniform(rng, format!("{prefix}.weight"), &[f_in, f_out], f_in),
            bias: init::zeros(format!("{prefix}.bias"), &[f_out]),
        }
    }

    fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        ops::linear(tape, x, &self.weight.tensor, Some(&self.bias.tensor))
    }
}

/// Two 3x3 convs with batchnorm and a 1x1 strided shortcut.
#[derive(Debug, Clone)]
struct ResidualStage {
    conv1: Conv2dLayer,
    bn1: BatchNorm2dLayer,
    conv2: Conv2dLayer,
    bn2: BatchNorm2dLayer,
    shortcut: Conv2dLayer,
}

impl ResidualStage {
    fn new(rng: &mut ChaCha20Rng, prefix: &str, c_in: usize, c_out: usize) -> ResidualStage {
        ResidualStage {
            conv1: Conv2dLayer::new(rng, &format!("{prefix}.conv1"), c_in, c_out, 3, 2, 1, false),
            bn1: BatchNorm2dLayer::new(&format!("{prefix}.bn1"), c_out),
            conv2: Conv2dLayer::new(rng, &format!("{prefix}.conv2"), c_out, c_out, 3, 1, 1, false),
            bn2: BatchNorm2dLayer::new(&format!("{prefix}.bn2"), c_out),
            shortcut: Conv2dLayer::new(rng, &format!("{prefix}.shortcut"), c_in, c_out, 1, 2, 0, false),
        }
    }

    fn forward(&mut self, tape: &mut Tape, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.bn1.forward(tape, &y, mode)?;
        let y = ops::relu(tape, &y);
        let y = self.conv2.forward(tape, &y)?;
        let y = self.bn2.forward(tape, &y, mode)?;
        let s = self.shortcut.forward(tape, x)?;
        let y = ops::add(tape, &y, &s)?;
        Ok(ops::relu(tape, &y))
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    stem_conv: Conv2dLayer,
    stem_bn: BatchNorm2dLayer,
    stages: Vec<ResidualStage>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: TConv2dLayer,
    bn: BatchNorm2dLayer,
}

#[derive(Debug, Clone)]
struct Decoder {
    stages: Vec<DecoderStage>,
    out_conv: Conv2dLayer,
}

#[derive(Debug, Clone)]
struct Classifier {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    fc: LinearLayer,
}

/// Everything the loss needs, plus the intermediate outputs tests inspect.
pub struct ForwardOutput {
    pub loss: Tensor,
    pub logits: Tensor,
    pub recon: Tensor,
}

/// The assembled network with its parameters and batchnorm state.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    bank: WaveletFilterBank,
    encoder: Encoder,
    oga: OgaBlock,
    decoder: Decoder,
    classifier: Classifier,
}

impl Model {
    /// Builds a model with seeded Kaiming-uniform initialization. The same
    /// (config, seed) pair always yields bitwise identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let widths = &config.encoder_widths;

        let stem_conv = Conv2dLayer::new(
            &mut rng,
            "encoder.stem.conv",
            config.in_channels,
            widths[0],
            3,
            1,
            1,
            false,
        );
        let stem_bn = BatchNorm2dLayer::new("encoder.stem.bn", widths[0]);
        let mut stages = Vec::new();
        for (i, &w_out) in widths.iter().enumerate() {
            let w_in = if i == 0 { widths[0] } else { widths[i - 1] };
            stages.push(ResidualStage::new(
                &mut rng,
                &format!("encoder.stage{i}"),
                w_in,
                w_out,
            ));
        }
        let encoder = Encoder { stem_conv, stem_bn, stages };

        let oga = OgaBlock::new(config.oga, "oga", &mut rng)?;

        let plan = config.fusion_plan();
        let mut dec_widths: Vec<usize> = widths.clone();
        dec_widths.reverse();
        let mut dec_stages = Vec::new();
        let mut c_in = plan.fused_channels();
        for (i, &w_out) in dec_widths.iter().enumerate() {
            dec_stages.push(DecoderStage {
                up: TConv2dLayer::new(&mut rng, &format!("decoder.up{i}"), c_in, w_out, 2),
                bn: BatchNorm2dLayer::new(&format!("decoder.up{i}.bn"), w_out),
            });
            c_in = w_out;
        }
        let out_conv = Conv2dLayer::new(&mut rng, "decoder.out", c_in, config.in_channels, 3, 1, 1, true);
        let decoder = Decoder { stages: dec_stages, out_conv };

        let classifier = Classifier {
            conv1: Conv2dLayer::new(
                &mut rng,
                "classifier.conv1",
                config.in_channels,
                HEAD_WIDTHS[0],
                3,
                2,
                1,
                true,
            ),
            conv2: Conv2dLayer::new(
                &mut rng,
                "classifier.conv2",
                HEAD_WIDTHS[0],
                HEAD_WIDTHS[1],
                3,
                2,
                1,
                true,
            ),
            fc: LinearLayer::new(&mut rng, "classifier.fc", HEAD_WIDTHS[1], config.num_classes),
        };

        let bank = WaveletFilterBank::by_name(&config.wavelet_bank)?;
        Ok(Model { config, bank, encoder, oga, decoder, classifier })
    }

    /// Hierarchical feature extraction: stem + stride-2 residual stages.
    pub fn encode(&mut self, tape: &mut Tape, image: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = image.shape();
        let want = self.config.image_size;
        if s.len() != 4 || s[1] != self.config.in_channels || s[2] != want || s[3] != want {
            return Err(Error::invalid(format!(
                "encode: input shape {s:?} does not match expected [N, {}, {want}, {want}]",
                self.config.in_channels
            )));
        }
        let x = self.encoder.stem_conv.forward(tape, image)?;
        let x = self.encoder.stem_bn.forward(tape, &x, mode)?;
        let mut x = ops::relu(tape, &x);
        for stage in &mut self.encoder.stages {
            x = stage.forward(tape, &x, mode)?;
        }
        Ok(x)
    }

    /// OGA applied at the bottleneck.
    pub fn attend(&self, tape: &mut Tape, features: &Tensor) -> Result<Tensor> {
        self.oga.forward(tape, features)
    }

    pub fn oga_block(&self) -> &OgaBlock {
        &self.oga
    }

    /// Wavelet feature planes at the bottleneck grid: four decimated and four
    /// pooled stationary planes per input channel, each standardized to mean
    /// zero / unit variance over the batch, concatenated after the OGA output.
    pub fn fuse(&self, tape: &mut Tape, oga_out: &Tensor, image: &Tensor) -> Result<Tensor> {
        let plan = self.config.fusion_plan();
        let s = self.config.bottleneck_size();
        let os = oga_out.shape();
        if os.len() != 4 || os[1] != plan.encoder_channels || os[2] != s || os[3] != s {
            return Err(Error::dim(format!(
                "fuse: oga output shape {os:?} does not match {plan} at {s}x{s}"
            )));
        }
        let n = os[0];
        if image.shape()[0] != n {
            return Err(Error::dim(format!(
                "fuse: image batch {} != feature batch {n}",
                image.shape()[0]
            )));
        }
        let wavelet = self.wavelet_features(tape, image)?;
        ops::concat_channels(tape, &[oga_out, &wavelet])
    }

    /// The fusion branch as one differentiable op: image ->
    /// [N, 8 * in_channels, s, s] (DWT block then SWT block, four planes per
    /// input channel each, LL/LH/HL/HH order). Both transforms are linear, so
    /// the backward pass is their adjoint (idwt2d for the orthonormal DWT, an
    /// explicit scatter for the a-trous SWT) composed with the pooling and
    /// standardization cotangents.
    fn wavelet_features(&self, tape: &mut Tape, image: &Tensor) -> Result<Tensor> {
        let plan = self.config.fusion_plan();
        let levels = self.config.wavelet_levels();
        let s = self.config.bottleneck_size();
        let c = self.config.in_channels;
        let size = self.config.image_size;
        let factor = size / s;
        let n = image.shape()[0];
        let plane_len = s * s;
        let block = plan.dwt_channels;

        let mut dwt_planes = vec![0.0; n * block * plane_len];
        let mut swt_planes = vec![0.0; n * block * plane_len];
        for i in 0..n {
            let sample = Tensor::new(
                image.data()[i * c * size * size..(i + 1) * c * size * size].to_vec(),
                &[c, size, size],
            );
            let dp = dwt2d(&sample, &self.bank, levels)?;
            let last = dp.detail.last().unwrap();
            for ch in 0..c {
                for (b, plane) in [&dp.ll, &last.lh, &last.hl, &last.hh].iter().enumerate() {
                    let dst = ((i * block) + ch * 4 + b) * plane_len;
                    dwt_planes[dst..dst + plane_len]
                        .copy_from_slice(&plane.data()[ch * plane_len..(ch + 1) * plane_len]);
                }
            }

            let sp = swt2d(&sample, &self.bank, levels)?;
            let wlast = sp.detail.last().unwrap();
            let inv_pool = 1.0 / (factor * factor) as f64;
            for ch in 0..c {
                for (b, plane) in [&sp.ll, &wlast.lh, &wlast.hl, &wlast.hh].iter().enumerate() {
                    let src = &plane.data()[ch * size * size..(ch + 1) * size * size];
                    let dst = ((i * block) + ch * 4 + b) * plane_len;
                    for oy in 0..s {
                        for ox in 0..s {
                            let mut acc = 0.0;
                            for ky in 0..factor {
                                let row = (oy * factor + ky) * size + ox * factor;
                                for kx in 0..factor {
                                    acc += src[row + kx];
                                }
                            }
                            swt_planes[dst + oy * s + ox] = acc * inv_pool;
                        }
                    }
                }
            }
        }

        // Per-plane standardization over the batch; approximation planes have
        // gain 2^J and would otherwise dominate the concat. Returns the
        // per-channel 1/std needed by the backward pass.
        let standardize = |data: &mut [f64]| -> Vec<f64> {
            let count = (n * plane_len) as f64;
            let mut inv_stds = vec![0.0; block];
            for ch in 0..block {
                let mut sum = 0.0;
                for i in 0..n {
                    let base = (i * block + ch) * plane_len;
                    sum += data[base..base + plane_len].iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for i in 0..n {
                    let base = (i * block + ch) * plane_len;
                    for v in &data[base..base + plane_len] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let inv = 1.0 / (sq / count + PLANE_STD_EPS).sqrt();
                for i in 0..n {
                    let base = (i * block + ch) * plane_len;
                    for v in &mut data[base..base + plane_len] {
                        *v = (*v - mean) * inv;
                    }
                }
                inv_stds[ch] = inv;
            }
            inv_stds
        };
        let dwt_inv_std = standardize(&mut dwt_planes);
        let swt_inv_std = standardize(&mut swt_planes);

        let total_c = 2 * block;
        let mut data = vec![0.0; n * total_c * plane_len];
        for i in 0..n {
            let dst = i * total_c * plane_len;
            data[dst..dst + block * plane_len]
                .copy_from_slice(&dwt_planes[i * block * plane_len..(i + 1) * block * plane_len]);
            data[dst + block * plane_len..dst + 2 * block * plane_len]
                .copy_from_slice(&swt_planes[i * block * plane_len..(i + 1) * block * plane_len]);
        }
        let mut out = Tensor::new(data, &[n, total_c, s, s]);

        if tape.should_record(&[image]) {
            let image_id = image.id();
            let bank = self.bank.clone();
            let dwt_y = std::sync::Arc::new(dwt_planes);
            let swt_y = std::sync::Arc::new(swt_planes);
            tape.record(&mut out, move |gy, store| {
                // split the fused gradient back into the two blocks
                let mut g_dwt = vec![0.0; n * block * plane_len];
                let mut g_swt = vec![0.0; n * block * plane_len];
                for i in 0..n {
                    let src = i * total_c * plane_len;
                    g_dwt[i * block * plane_len..(i + 1) * block * plane_len]
                        .copy_from_slice(&gy[src..src + block * plane_len]);
                    g_swt[i * block * plane_len..(i + 1) * block * plane_len]
                        .copy_from_slice(&gy[src + block * plane_len..src + 2 * block * plane_len]);
                }

                // standardization cotangent (same shape as batchnorm's):
                // dx = inv_std * (g - mean(g) - y * mean(g .* y))
                let destandardize = |g: &mut [f64], y: &[f64], inv_std: &[f64]| {
                    let count = (n * plane_len) as f64;
                    for ch in 0..block {
                        let mut sum_g = 0.0;
                        let mut sum_gy = 0.0;
                        for i in 0..n {
                            let base = (i * block + ch) * plane_len;
                            for j in base..base + plane_len {
                                sum_g += g[j];
                                sum_gy += g[j] * y[j];
                            }
                        }
                        let mg = sum_g / count;
                        let mgy = sum_gy / count;
                        for i in 0..n {
                            let base = (i * block + ch) * plane_len;
                            for j in base..base + plane_len {
                                g[j] = inv_std[ch] * (g[j] - mg - y[j] * mgy);
                            }
                        }
                    }
                };
                destandardize(&mut g_dwt, &dwt_y, &dwt_inv_std);
                destandardize(&mut g_swt, &swt_y, &swt_inv_std);

                let mut d_image = vec![0.0; n * c * size * size];
                let gather_planes = |g: &[f64], i: usize, b: usize, h: usize, w: usize| {
                    // band b of every channel for sample i, as one [C, h, w]
                    let mut plane = vec![0.0; c * h * w];
                    for ch in 0..c {
                        let src = ((i * block) + ch * 4 + b) * plane_len;
                        plane[ch * h * w..(ch + 1) * h * w].copy_from_slice(&g[src..src + plane_len]);
                    }
                    Tensor::new(plane, &[c, h, w])
                };
                for i in 0..n {
                    // DWT block: embed the level-J cotangents in an otherwise
                    // zero pyramid; idwt2d is the adjoint of the analysis.
                    let mut detail = Vec::new();
                    let (mut dh, mut dw) = (size, size);
                    for level in 1..=levels {
                        dh /= 2;
                        dw /= 2;
                        let (lh, hl, hh) = if level == levels {
                            (
                                gather_planes(&g_dwt, i, 1, dh, dw),
                                gather_planes(&g_dwt, i, 2, dh, dw),
                                gather_planes(&g_dwt, i, 3, dh, dw),
                            )
                        } else {
                            (
                                Tensor::zeros(&[c, dh, dw]),
                                Tensor::zeros(&[c, dh, dw]),
                                Tensor::zeros(&[c, dh, dw]),
                            )
                        };
                        detail.push(crate::wavelet::LevelPlanes { level, lh, hl, hh });
                    }
                    let pyramid = crate::wavelet::SubbandPyramid {
                        kind: crate::wavelet::TransformKind::Dwt,
                        levels,
                        channels: c,
                        source_shape: (size, size),
                        detail,
                        ll: gather_planes(&g_dwt, i, 0, s, s),
                    };
                    let d_dwt = crate::wavelet::idwt2d(&pyramid, &bank)
                        .expect("adjoint pyramid has matching shapes");
                    let dst = &mut d_image[i * c * size * size..(i + 1) * c * size * size];
                    for (d, v) in dst.iter_mut().zip(d_dwt.data()) {
                        *d += v;
                    }

                    // SWT block: undo the average pooling (uniform spread),
                    // then run the explicit a-trous adjoint.
                    let inv_pool = 1.0 / (factor * factor) as f64;
                    let unpool = |b: usize| {
                        let mut full = vec![0.0; c * size * size];
                        for ch in 0..c {
                            let src = ((i * block) + ch * 4 + b) * plane_len;
                            for oy in 0..s {
                                for ox in 0..s {
                                    let v = g_swt[src + oy * s + ox] * inv_pool;
                                    for ky in 0..factor {
                                        let row = ch * size * size + (oy * factor + ky) * size + ox * factor;
                                        for kx in 0..factor {
                                            full[row + kx] = v;
                                        }
                                    }
                                }
                            }
                        }
                        Tensor::new(full, &[c, size, size])
                    };
                    let d_swt = crate::wavelet::swt2d_final_level_adjoint(
                        &unpool(0),
                        &unpool(1),
                        &unpool(2),
                        &unpool(3),
                        &bank,
                        levels,
                    )
                    .expect("adjoint planes have matching shapes");
                    for (d, v) in dst.iter_mut().zip(d_swt.data()) {
                        *d += v;
                    }
                }
                store.accumulate(image_id, &d_image);
            });
        }
        Ok(out)
    }

    /// Upsamples the fused bottleneck back to image size; outputs in [0,1].
    pub fn decode(&mut self, tape: &mut Tape, fused: &Tensor, mode: Mode) -> Result<Tensor> {
        let plan = self.config.fusion_plan();
        let s = self.config.bottleneck_size();
        let fs = fused.shape();
        if fs.len() != 4 || fs[1] != plan.fused_channels() || fs[2] != s || fs[3] != s {
            return Err(Error::dim(format!(
                "decode: fused shape {fs:?} does not match {plan} at {s}x{s}"
            )));
        }
        let mut x = fused.clone();
        for stage in &mut self.decoder.stages {
            x = stage.up.forward(tape, &x)?;
            x = stage.bn.forward(tape, &x, mode)?;
            x = ops::relu(tape, &x);
        }
        let x = self.decoder.out_conv.forward(tape, &x)?;
        Ok(ops::sigmoid(tape, &x))
    }

    /// Classifies the reconstructed image.
    pub fn classify(&mut self, tape: &mut Tape, recon: &Tensor, _mode: Mode) -> Result<Tensor> {
        let s = recon.shape();
        let want = self.config.image_size;
        if s.len() != 4 || s[1] != self.config.in_channels || s[2] != want || s[3] != want {
            return Err(Error::dim(format!(
                "classify: input shape {s:?} does not match [N, {}, {want}, {want}]",
                self.config.in_channels
            )));
        }
        let x = self.classifier.conv1.forward(tape, recon)?;
        let x = ops::relu(tape, &x);
        let x = self.classifier.conv2.forward(tape, &x)?;
        let x = ops::relu(tape, &x);
        let x = ops::global_avg_pool(tape, &x)?;
        self.classifier.fc.forward(tape, &x)
    }

    /// Full pipeline producing (logits, reconstruction).
    pub fn run(&mut self, tape: &mut Tape, image: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let features = self.encode(tape, image, mode)?;
        let attended = self.oga.forward(tape, &features)?;
        let fused = self.fuse(tape, &attended, image)?;
        let recon = self.decode(tape, &fused, mode)?;
        let logits = self.classify(tape, &recon, mode)?;
        Ok((logits, recon))
    }

    /// Cross-entropy plus the optional weighted reconstruction term.
    pub fn forward_loss(
        &mut self,
        tape: &mut Tape,
        image: &Tensor,
        labels: &[usize],
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let (logits, recon) = self.run(tape, image, mode)?;
        let ce = ops::cross_entropy(tape, &logits, labels)?;
        let lambda = self.config.recon_loss_weight;
        let loss = if lambda > 0.0 {
            let rec = ops::mse(tape, &recon, image)?;
            let rec = ops::scale(tape, &rec, lambda);
            ops::add(tape, &ce, &rec)?
        } else {
            ce
        };
        Ok(ForwardOutput { loss, logits, recon })
    }

    /// Eval-mode logits without gradient recording.
    pub fn predict_logits(&mut self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let (logits, _) = self.run(&mut tape, image, Mode::Eval)?;
        Ok(logits)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        let enc = &self.encoder;
        f(&enc.stem_conv.weight);
        f(&enc.stem_bn.gamma);
        f(&enc.stem_bn.beta);
        for st in &enc.stages {
            f(&st.conv1.weight);
            f(&st.bn1.gamma);
            f(&st.bn1.beta);
            f(&st.conv2.weight);
            f(&st.bn2.gamma);
            f(&st.bn2.beta);
            f(&st.shortcut.weight);
        }
        self.oga.visit(f);
        for st in &self.decoder.stages {
            f(&st.up.weight);
            f(&st.bn.gamma);
            f(&st.bn.beta);
        }
        f(&self.decoder.out_conv.weight);
        f(self.decoder.out_conv.bias.as_ref().unwrap());
        f(&self.classifier.conv1.weight);
        f(self.classifier.conv1.bias.as_ref().unwrap());
        f(&self.classifier.conv2.weight);
        f(self.classifier.conv2.bias.as_ref().unwrap());
        f(&self.classifier.fc.weight);
        f(&self.classifier.fc.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        let enc = &mut self.encoder;
        f(&mut enc.stem_conv.weight);
        f(&mut enc.stem_bn.gamma);
        f(&mut enc.stem_bn.beta);
        for st in &mut enc.stages {
            f(&mut st.conv1.weight);
            f(&mut st.bn1.gamma);
            f(&mut st.bn1.beta);
            f(&mut st.conv2.weight);
            f(&mut st.bn2.gamma);
            f(&mut st.bn2.beta);
            f(&mut st.shortcut.weight);
        }
        self.oga.visit_mut(f);
        for st in &mut self.decoder.stages {
            f(&mut st.up.weight);
            f(&mut st.bn.gamma);
            f(&mut st.bn.beta);
        }
        f(&mut self.decoder.out_conv.weight);
        f(self.decoder.out_conv.bias.as_mut().unwrap());
        f(&mut self.classifier.conv1.weight);
        f(self.classifier.conv1.bias.as_mut().unwrap());
        f(&mut self.classifier.conv2.weight);
        f(self.classifier.conv2.bias.as_mut().unwrap());
        f(&mut self.classifier.fc.weight);
        f(&mut self.classifier.fc.bias);
    }

    /// Non-trainable state: batchnorm running statistics, in a fixed order.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[f64])) {
        let mut emit = |bn: &BatchNorm2dLayer| {
            f(&format!("{}.running_mean", bn.prefix), &bn.running_mean);
            f(&format!("{}.running_var", bn.prefix), &bn.running_var);
        };
        emit(&self.encoder.stem_bn);
        for st in &self.encoder.stages {
            emit(&st.bn1);
            emit(&st.bn2);
        }
        for st in &self.decoder.stages {
            emit(&st.bn);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        let mut emit = |bn: &mut BatchNorm2dLayer| {
            let prefix = bn.prefix.clone();
            f(&format!("{prefix}.running_mean"), &mut bn.running_mean);
            f(&format!("{prefix}.running_var"), &mut bn.running_var);
        };
        emit(&mut self.encoder.stem_bn);
        for st in &mut self.encoder.stages {
            emit(&mut st.bn1);
            emit(&mut st.bn2);
        }
        for st in &mut self.decoder.stages {
            emit(&mut st.bn);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.tensor.numel());
        n
    }

    /// Zeroes every parameter and buffer; the test hook behind the
    /// "all-zero checkpoint produces all-zero activations" example.
    pub fn zero_all(&mut self) {
        self.visit_params_mut(&mut |p| p.set_value(vec![0.0; p.tensor.numel()]));
        self.visit_buffers_mut(&mut |_, b| b.iter_mut().for_each(|v| *v = 0.0));
    }
}
