//! Frequency gated modulation: fuses high-frequency features with the
//! upsampled low-frequency prior through gate, difference and residual
//! streams weighted per channel.

use lfinet_tensor::ops::{bilinear_upsample, concat, global_avg_pool, softmax, NormMode};
use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};
use crate::layers::{BatchNorm, Builder, Conv};

#[derive(Clone)]
pub struct Fgm<T: Element> {
    pub channels: usize,
    pub prior_channels: usize,
    pub gate_proj: Conv<T>,
    pub gate_bn: BatchNorm<T>,
    pub gate_dw: Conv<T>,
    pub value_dw: Conv<T>,
    pub value_bn: BatchNorm<T>,
    pub diff_proj: Conv<T>,
    pub diff_bn: BatchNorm<T>,
    pub res_proj: Conv<T>,
    /// Absent when the streams are averaged with equal weights.
    pub weight_proj: Option<Conv<T>>,
}

pub struct FgmIntermediates<T: Element> {
    pub prior: Tensor<T>,
    pub gate: Tensor<T>,
    pub value: Tensor<T>,
    pub m_gate: Tensor<T>,
    pub m_diff: Tensor<T>,
    pub m_res: Tensor<T>,
    /// N×3×C×1×1 fusion weights.
    pub weights: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T: Element> Fgm<T> {
    pub fn new(b: &mut Builder<T>, name: &str, channels: usize, prior_channels: usize, equal_weights: bool) -> Result<Self> {
        let c = channels;
        Ok(Fgm {
            channels,
            prior_channels,
            gate_proj: b.conv_before_norm(&format!("{name}.gate_proj"), prior_channels, c, 1, 1, 1)?,
            gate_bn: b.batch_norm(&format!("{name}.gate_bn"), c)?,
            gate_dw: b.depthwise(&format!("{name}.gate_dw"), c, 3, 1)?,
            value_dw: b.conv_before_norm(&format!("{name}.value_dw"), c, c, 3, 1, c)?,
            value_bn: b.batch_norm(&format!("{name}.value_bn"), c)?,
            diff_proj: b.conv_before_norm(&format!("{name}.diff_proj"), c + prior_channels, c, 1, 1, 1)?,
            diff_bn: b.batch_norm(&format!("{name}.diff_bn"), c)?,
            res_proj: b.pointwise(&format!("{name}.res_proj"), c, c)?,
            weight_proj: if equal_weights { None } else { Some(b.pointwise(&format!("{name}.weight_proj"), c, 3 * c)?) },
        })
    }

    pub fn forward(&self, features: &Tensor<T>, prior: &Tensor<T>, level: usize, mode: NormMode) -> Result<Tensor<T>> {
        Ok(self.forward_detailed(features, prior, level, mode)?.output)
    }

    /// `features` are the level-`level` high-frequency features; `prior`
    /// is the transformer output at one eighth resolution.
    pub fn forward_detailed(&self, features: &Tensor<T>, prior: &Tensor<T>, level: usize, mode: NormMode) -> Result<FgmIntermediates<T>> {
        let (n, c, h, w) = features.dims4("fgm")?;
        if c != self.channels {
            return Err(invalid(format!("fgm expects {} feature channels, got {c}", self.channels)));
        }
        if level > 2 {
            return Err(invalid(format!("fgm level {level} out of range 0..=2")));
        }
        let up = bilinear_upsample(prior, 1 << (3 - level))?;
        let (_, pc, uh, uw) = up.dims4("fgm")?;
        if (uh, uw) != (h, w) || pc != self.prior_channels {
            return Err(invalid(format!(
                "upsampled prior is {pc}x{uh}x{uw}, features need {}x{h}x{w}",
                self.prior_channels
            )));
        }
        let gate = self.gate_dw.forward(&self.gate_bn.forward(&self.gate_proj.forward(&up)?, mode)?.gelu())?.sigmoid();
        let value = self.value_bn.forward(&self.value_dw.forward(features)?, mode)?.gelu();
        let m_gate = gate.mul(&value)?;
        let m_diff = self.diff_bn.forward(&self.diff_proj.forward(&concat(&[features, &up], 1)?)?, mode)?.gelu();
        let m_res = self.res_proj.forward(features)?;

        let weights = match &self.weight_proj {
            Some(proj) => {
                let pooled = global_avg_pool(&m_gate.add(&m_diff)?.add(&m_res)?)?;
                softmax(&proj.forward(&pooled)?.reshape(&[n, 3, c, 1, 1])?, 1)?
            }
            None => Tensor::full(&[n, 3, c, 1, 1], T::lit(1.0 / 3.0)),
        };
        let w_k = |k: usize| -> Result<Tensor<T>> { Ok(weights.narrow(1, k, 1)?.reshape(&[n, c, 1, 1])?) };
        let output = m_gate.mul(&w_k(0)?)?.add(&m_diff.mul(&w_k(1)?)?)?.add(&m_res.mul(&w_k(2)?)?)?;
        Ok(FgmIntermediates { prior: up, gate, value, m_gate, m_diff, m_res, weights, output })
    }
}
