//! Progressive reconstruction decoder: transposed-convolution upsampling,
//! skip concatenation with the fused features and double conv stages.

use lfinet_tensor::ops::{bilinear_upsample, concat, NormMode};
use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};
use crate::layers::{BatchNorm, Builder, Conv, ConvTranspose};

/// `(conv3×3 → BN → ReLU) × 2`
#[derive(Clone)]
pub struct ConvStage<T: Element> {
    pub conv1: Conv<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv<T>,
    pub bn2: BatchNorm<T>,
}

impl<T: Element> ConvStage<T> {
    pub fn new(b: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(ConvStage {
            conv1: b.conv_before_norm(&format!("{name}.conv1"), cin, cout, 3, 1, 1)?,
            bn1: b.batch_norm(&format!("{name}.bn1"), cout)?,
            conv2: b.conv_before_norm(&format!("{name}.conv2"), cout, cout, 3, 1, 1)?,
            bn2: b.batch_norm(&format!("{name}.bn2"), cout)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let cin = self.conv1.w.shape()[1];
        if x.ndim() != 4 || x.shape()[1] != cin {
            return Err(invalid(format!("conv stage expects {cin} input channels, got shape {:?}", x.shape())));
        }
        let h = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu();
        Ok(self.bn2.forward(&self.conv2.forward(&h)?, mode)?.relu())
    }
}

#[derive(Clone)]
pub struct DecoderLevel<T: Element> {
    pub up: ConvTranspose<T>,
    pub stage: ConvStage<T>,
}

#[derive(Clone)]
pub enum Decoder<T: Element> {
    /// Upsample, concatenate and refine level by level.
    Progressive { levels: [DecoderLevel<T>; 3], head: Conv<T> },
    /// One pointwise conv over all features resampled to full resolution.
    Flat { head: Conv<T> },
}

#[derive(Debug)]
pub struct DecoderOutput<T: Element> {
    /// I_de^2, I_de^1, I_de^0 for the progressive decoder.
    pub states: Vec<Tensor<T>>,
    pub prob: Tensor<T>,
}

impl<T: Element> Decoder<T> {
    /// `widths[l]` is the fused feature width at level `l`; `prior` the
    /// transformer width.
    pub fn progressive(b: &mut Builder<T>, name: &str, widths: [usize; 3], prior: usize) -> Result<Self> {
        let mut make = |l: usize, cin: usize| -> Result<DecoderLevel<T>> {
            Ok(DecoderLevel {
                up: b.conv_transpose(&format!("{name}.up{l}"), cin, widths[l], 2, 2)?,
                stage: ConvStage::new(b, &format!("{name}.stage{l}"), 2 * widths[l], widths[l])?,
            })
        };
        let l2 = make(2, prior)?;
        let l1 = make(1, widths[2])?;
        let l0 = make(0, widths[1])?;
        let head = b.pointwise(&format!("{name}.head"), widths[0], 1)?;
        Ok(Decoder::Progressive { levels: [l0, l1, l2], head })
    }

    pub fn flat(b: &mut Builder<T>, name: &str, widths: [usize; 3], prior: usize) -> Result<Self> {
        let cin = widths.iter().sum::<usize>() + prior;
        Ok(Decoder::Flat { head: b.pointwise(&format!("{name}.head"), cin, 1)? })
    }

    pub fn forward(&self, prior: &Tensor<T>, fused: &[Tensor<T>; 3], mode: NormMode) -> Result<DecoderOutput<T>> {
        match self {
            Decoder::Progressive { levels, head } => {
                let mut state = prior.clone();
                let mut states = Vec::with_capacity(3);
                for l in (0..3).rev() {
                    let up = levels[l].up.forward(&state)?.relu();
                    if up.shape()[2..] != fused[l].shape()[2..] {
                        return Err(invalid(format!(
                            "decoder level {l}: upsampled state {:?} does not match skip {:?}",
                            up.shape(),
                            fused[l].shape()
                        )));
                    }
                    state = levels[l].stage.forward(&concat(&[&up, &fused[l]], 1)?, mode)?;
                    states.push(state.clone());
                }
                Ok(DecoderOutput { prob: head.forward(&state)?.sigmoid(), states })
            }
            Decoder::Flat { head } => {
                let all = [
                    fused[0].clone(),
                    bilinear_upsample(&fused[1], 2)?,
                    bilinear_upsample(&fused[2], 4)?,
                    bilinear_upsample(prior, 8)?,
                ];
                let refs: Vec<&Tensor<T>> = all.iter().collect();
                Ok(DecoderOutput { prob: head.forward(&concat(&refs, 1)?)?.sigmoid(), states: Vec::new() })
            }
        }
    }
}
