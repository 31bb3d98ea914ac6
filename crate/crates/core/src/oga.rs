//! Omni-dimensional gated attention.
//!
//! From the pooled input features the block generates four attentions -
//! spatial (over kernel taps), channel (input channels), filter (output
//! channels), and kernel (a softmax mixture over a bank of candidate
//! kernels) - and collapses the bank into one convolution kernel per sample:
//!
//!   W_s = sum_m kernel[s,m] * (spatial[s] (x) channel[s] (x) filter[s]) . bank[m]
//!
//! with each attention broadcast over the axes it does not index. The result
//! feeds a per-sample convolution, so two samples in one batch can see two
//! different kernels.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::ops;
use crate::tape::Tape;
use crate::tensor::{Parameter, Tensor};

/// Dimensions of one OGA block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OgaConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub num_kernels: usize,
    pub reduction_ratio: usize,
}

impl OgaConfig {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel_size: usize,
        num_kernels: usize,
        reduction_ratio: usize,
    ) -> Result<OgaConfig> {
        let cfg = OgaConfig { c_in, c_out, kernel_size, num_kernels, reduction_ratio };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.num_kernels == 0 || self.reduction_ratio == 0 {
            return Err(Error::invalid(format!("oga config has a zero field: {self:?}")));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "oga kernel size {} must be odd so outputs keep the input extent",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Bottleneck width of the attention MLP.
    pub fn hidden_width(&self) -> usize {
        (self.c_in / self.reduction_ratio).max(4)
    }

    /// Padding that keeps spatial extents unchanged.
    pub fn same_padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }
}

/// The four attention tensors for a batch, one row per sample.
///
/// spatial [N, k, k], channel [N, c_in], filter [N, c_out] are sigmoid gated
/// (entries strictly in (0,1)); kernel [N, n] lies on the probability simplex.
#[derive(Debug, Clone)]
pub struct AttentionSet {
    pub spatial: Tensor,
    pub channel: Tensor,
    pub filter: Tensor,
    pub kernel: Tensor,
}

impl AttentionSet {
    pub fn batch_size(&self) -> usize {
        self.spatial.shape()[0]
    }

    /// Checks the gate ranges and the simplex constraint; used by tests.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("spatial", &self.spatial), ("channel", &self.channel), ("filter", &self.filter)] {
            if t.data().iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return Err(Error::invalid(format!("{name} attention has entries outside (0,1)")));
            }
        }
        let n = self.kernel.shape()[1];
        for (i, row) in self.kernel.data().chunks(n).enumerate() {
            if row.iter().any(|v| *v < 0.0) {
                return Err(Error::invalid(format!("kernel attention row {i} has negative entries")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "kernel attention row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// Collapses the candidate-kernel bank into one [N, c_out, c_in, k, k]
/// kernel tensor under the four attentions. Linear in `bank_weights`.
pub fn aggregate_kernel(
    tape: &mut Tape,
    att: &AttentionSet,
    bank_weights: &Tensor,
    config: &OgaConfig,
) -> Result<Tensor> {
    let (c_in, c_out, k, nk) =
        (config.c_in, config.c_out, config.kernel_size, config.num_kernels);
    let n = att.batch_size();
    if bank_weights.shape() != [nk, c_out, c_in, k, k] {
        return Err(Error::dim(format!(
            "aggregate_kernel: bank shape {:?} does not match config {:?}",
            bank_weights.shape(),
            config
        )));
    }
    for (name, t, want) in [
        ("spatial", &att.spatial, vec![n, k, k]),
        ("channel", &att.channel, vec![n, c_in]),
        ("filter", &att.filter, vec![n, c_out]),
        ("kernel", &att.kernel, vec![n, nk]),
    ] {
        if t.shape() != want.as_slice() {
            return Err(Error::dim(format!(
                "aggregate_kernel: {name} attention shape {:?}, expected {want:?}",
                t.shape()
            )));
        }
    }

    let okk = c_out * c_in * k * k;
    let kk = k * k;
    let bank = bank_weights.data();
    let (sp, ch, fl, kr) = (att.spatial.data(), att.channel.data(), att.filter.data(), att.kernel.data());

    // mixed[s] = sum_m kernel[s,m] * bank[m], then gate elementwise.
    let mix = |s: usize, out: &mut [f64]| {
        out.fill(0.0);
        for m in 0..nk {
            let w = kr[s * nk + m];
            if w != 0.0 {
                for (o, b) in out.iter_mut().zip(&bank[m * okk..(m + 1) * okk]) {
                    *o += w * b;
                }
            }
        }
    };

    let mut data = vec![0.0; n * okk];
    for s in 0..n {
        let dst = &mut data[s * okk..(s + 1) * okk];
        mix(s, dst);
        let mut idx = 0;
        for o in 0..c_out {
            let f = fl[s * c_out + o];
            for i in 0..c_in {
                let cf = f * ch[s * c_in + i];
                for t in 0..kk {
                    dst[idx] *= cf * sp[s * kk + t];
                    idx += 1;
                }
            }
        }
    }

    let mut out = Tensor::new(data, &[n, c_out, c_in, k, k]);
    let inputs = [&att.spatial, &att.channel, &att.filter, &att.kernel, bank_weights];
    if tape.should_record(&inputs) {
        let ids: Vec<(u64, bool)> = inputs.iter().map(|t| (t.id(), t.tracks_grad())).collect();
        let sp = att.spatial.data_arc();
        let ch = att.channel.data_arc();
        let fl = att.filter.data_arc();
        let kr = att.kernel.data_arc();
        let bank = bank_weights.data_arc();
        let cfg = *config;
        tape.record(&mut out, move |gy, store| {
            let (c_in, c_out, k, nk) = (cfg.c_in, cfg.c_out, cfg.kernel_size, cfg.num_kernels);
            let kk = k * k;
            let okk = c_out * c_in * kk;
            let [sp_info, ch_info, fl_info, kr_info, bank_info] = ids.as_slice() else {
                unreachable!()
            };
            let mut d_sp = vec![0.0; gy.len() / okk * kk];
            let mut d_ch = vec![0.0; gy.len() / okk * c_in];
            let mut d_fl = vec![0.0; gy.len() / okk * c_out];
            let mut d_kr = vec![0.0; gy.len() / okk * nk];
            let mut d_bank = vec![0.0; nk * okk];
            let n = gy.len() / okk;
            let mut mixed = vec![0.0; okk];
            for s in 0..n {
                mixed.fill(0.0);
                for m in 0..nk {
                    let wv = kr[s * nk + m];
                    if wv != 0.0 {
                        for (o, b) in mixed.iter_mut().zip(&bank[m * okk..(m + 1) * okk]) {
                            *o += wv * b;
                        }
                    }
                }
                let g = &gy[s * okk..(s + 1) * okk];
                // gate product P = sp*ch*fl; tmp = P .* g feeds bank/kernel grads
                let mut idx = 0;
                for o in 0..c_out {
                    let f = fl[s * c_out + o];
                    for i in 0..c_in {
                        let c = ch[s * c_in + i];
                        for t in 0..kk {
                            let spv = sp[s * kk + t];
                            let gv = g[idx];
                            let bm = mixed[idx];
                            d_sp[s * kk + t] += c * f * bm * gv;
                            d_ch[s * c_in + i] += spv * f * bm * gv;
                            d_fl[s * c_out + o] += spv * c * bm * gv;
                            let p = spv * c * f * gv;
                            for m in 0..nk {
                                d_kr[s * nk + m] += p * bank[m * okk + idx];
                                d_bank[m * okk + idx] += kr[s * nk + m] * p;
                            }
                            idx += 1;
                        }
                    }
                }
            }
            if sp_info.1 {
                store.accumulate(sp_info.0, &d_sp);
            }
            if ch_info.1 {
                store.accumulate(ch_info.0, &d_ch);
            }
            if fl_info.1 {
                store.accumulate(fl_info.0, &d_fl);
            }
            if kr_info.1 {
                store.accumulate(kr_info.0, &d_kr);
            }
            if bank_info.1 {
                store.accumulate(bank_info.0, &d_bank);
            }
        });
    }
    Ok(out)
}

/// The OGA block: attention MLP plus the candidate-kernel bank.
#[derive(Debug, Clone)]
pub struct OgaBlock {
    pub config: OgaConfig,
    pub bank_weights: Parameter,
    pub bank_bias: Parameter,
    pub reduce_w: Parameter,
    pub reduce_b: Parameter,
    pub spatial_w: Parameter,
    pub spatial_b: Parameter,
    pub channel_w: Parameter,
    pub channel_b: Parameter,
    pub filter_w: Parameter,
    pub filter_b: Parameter,
    pub kernel_w: Parameter,
    pub kernel_b: Parameter,
}

impl OgaBlock {
    pub fn new(config: OgaConfig, prefix: &str, rng: &mut ChaCha20Rng) -> Result<OgaBlock> {
        config.validate()?;
        let (c_in, c_out, k, nk) =
            (config.c_in, config.c_out, config.kernel_size, config.num_kernels);
        let hidden = config.hidden_width();
        let fan_conv = c_in * k * k;
        Ok(OgaBlock {
            config,
            bank_weights: init::kaiming_uniform(
                rng,
                format!("{prefix}.bank.weights"),
                &[nk, c_out, c_in, k, k],
                fan_conv,
            ),
            bank_bias: init::zeros(format!("{prefix}.bank.bias"), &[c_out]),
            reduce_w: init::kaiming_uniform(rng, format!("{prefix}.reduce.weight"), &[c_in, hidden], c_in),
            reduce_b: init::zeros(format!("{prefix}.reduce.bias"), &[hidden]),
            spatial_w: init::kaiming_uniform(rng, format!("{prefix}.spatial.weight"), &[hidden, k * k], hidden),
            spatial_b: init::zeros(format!("{prefix}.spatial.bias"), &[k * k]),
            channel_w: init::kaiming_uniform(rng, format!("{prefix}.channel.weight"), &[hidden, c_in], hidden),
            channel_b: init::zeros(format!("{prefix}.channel.bias"), &[c_in]),
            filter_w: init::kaiming_uniform(rng, format!("{prefix}.filter.weight"), &[hidden, c_out], hidden),
            filter_b: init::zeros(format!("{prefix}.filter.bias"), &[c_out]),
            kernel_w: init::kaiming_uniform(rng, format!("{prefix}.kernel.weight"), &[hidden, nk], hidden),
            kernel_b: init::zeros(format!("{prefix}.kernel.bias"), &[nk]),
        })
    }

    /// Generates the four attentions from the features themselves
    /// (self-gating): GAP, bottleneck MLP, four parallel heads.
    pub fn attend(&self, tape: &mut Tape, features: &Tensor) -> Result<AttentionSet> {
        let s = features.shape();
        if s.len() != 4 || s[1] != self.config.c_in {
            return Err(Error::dim(format!(
                "oga attend: features {s:?} do not match c_in {}",
                self.config.c_in
            )));
        }
        let n = s[0];
        let k = self.config.kernel_size;
        let pooled = ops::global_avg_pool(tape, features)?;
        let hidden = ops::linear(tape, &pooled, &self.reduce_w.tensor, Some(&self.reduce_b.tensor))?;
        let hidden = ops::relu(tape, &hidden);

        let spatial_logits = ops::linear(tape, &hidden, &self.spatial_w.tensor, Some(&self.spatial_b.tensor))?;
        let spatial = ops::sigmoid(tape, &spatial_logits);
        let spatial = ops::reshape(tape, &spatial, &[n, k, k]);
        let channel_logits = ops::linear(tape, &hidden, &self.channel_w.tensor, Some(&self.channel_b.tensor))?;
        let channel = ops::sigmoid(tape, &channel_logits);
        let filter_logits = ops::linear(tape, &hidden, &self.filter_w.tensor, Some(&self.filter_b.tensor))?;
        let filter = ops::sigmoid(tape, &filter_logits);
        let kernel_logits = ops::linear(tape, &hidden, &self.kernel_w.tensor, Some(&self.kernel_b.tensor))?;
        let kernel = ops::softmax(tape, &kernel_logits, 1)?;

        Ok(AttentionSet { spatial, channel, filter, kernel })
    }

    /// attend -> aggregate -> per-sample same-size convolution + bank bias.
    pub fn forward(&self, tape: &mut Tape, features: &Tensor) -> Result<Tensor> {
        let att = self.attend(tape, features)?;
        self.forward_with_attention(tape, features, &att)
    }

    /// Runs the dynamic convolution under externally supplied attentions.
    /// This is the test hook behind the degeneracy invariants (identity
    /// gates reduce the block to a static conv2d with one bank kernel).
    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        att: &AttentionSet,
    ) -> Result<Tensor> {
        let weights = aggregate_kernel(tape, att, &self.bank_weights.tensor, &self.config)?;
        ops::conv2d_per_sample(
            tape,
            features,
            &weights,
            Some(&self.bank_bias.tensor),
            1,
            self.config.same_padding(),
        )
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in [
            &self.bank_weights,
            &self.bank_bias,
            &self.reduce_w,
            &self.reduce_b,
            &self.spatial_w,
            &self.spatial_b,
            &self.channel_w,
            &self.channel_b,
            &self.filter_w,
            &self.filter_b,
            &self.kernel_w,
            &self.kernel_b,
        ] {
            f(p);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in [
            &mut self.bank_weights,
            &mut self.bank_bias,
            &mut self.reduce_w,
            &mut self.reduce_b,
            &mut self.spatial_w,
            &mut self.spatial_b,
            &mut self.channel_w,
            &mut self.channel_b,
            &mut self.filter_w,
            &mut self.filter_b,
            &mut self.kernel_w,
            &mut self.kernel_b,
        ] {
            f(p);
        }
    }
}

/// All-open gates: spatial/channel/filter of ones and a one-hot kernel mix.
/// Under these the aggregated kernel is bank.weights[hot] bitwise.
pub fn identity_attention(config: &OgaConfig, batch: usize, hot: usize) -> AttentionSet {
    let k = config.kernel_size;
    let mut kernel = vec![0.0; batch * config.num_kernels];
    for s in 0..batch {
        kernel[s * config.num_kernels + hot] = 1.0;
    }
    AttentionSet {
        spatial: Tensor::ones(&[batch, k, k]),
        channel: Tensor::ones(&[batch, config.c_in]),
        filter: Tensor::ones(&[batch, config.c_out]),
        kernel: Tensor::new(kernel, &[batch, config.num_kernels]),
    }
}
