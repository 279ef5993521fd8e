//! Full network assembly.

use std::collections::BTreeSet;

use lfinet_tensor::ops::{Conv2dParams, NormMode};
use lfinet_tensor::{Element, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::cfib::{Fgm, FgmIntermediates, Hfb, SpatialTransformer, StConfig};
use crate::error::{invalid, Result};
use crate::layers::{Builder, Conv};
use crate::lms::{check_size, laplacian_decompose};
use crate::prd::Decoder;

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Learned strided convolutions replace the Laplacian pyramid.
    Lms,
    /// High-frequency blocks keep only their projection.
    Hfb,
    /// Fusion streams are averaged with equal weights.
    Fgm,
    /// The transformer reduces to its pointwise embedding.
    St,
    /// A single pointwise head replaces the progressive decoder.
    Prd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input (height, width), both multiples of 8.
    pub image_size: [usize; 2],
    /// Feature widths of levels 0, 1, 2.
    pub channels: [usize; 3],
    pub st_dim: usize,
    pub st_layers: usize,
    pub st_heads: usize,
    pub st_ffn_mult: usize,
    pub ablate: BTreeSet<Ablation>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: [64, 64],
            channels: [32, 64, 128],
            st_dim: 128,
            st_layers: 2,
            st_heads: 4,
            st_ffn_mult: 4,
            ablate: BTreeSet::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        check_size(h, w)?;
        for c in self.channels {
            crate::cfib::split_sizes(c)?;
        }
        if self.st_dim == 0 || self.st_heads == 0 || !self.st_dim.is_multiple_of(self.st_heads) {
            return Err(invalid(format!("st_dim {} must be a positive multiple of st_heads {}", self.st_dim, self.st_heads)));
        }
        if self.st_ffn_mult == 0 {
            return Err(invalid("st_ffn_mult must be positive"));
        }
        Ok(())
    }

    pub fn ablated(&self, a: Ablation) -> bool {
        self.ablate.contains(&a)
    }

    fn st_config(&self) -> StConfig {
        StConfig {
            dim: self.st_dim,
            layers: self.st_layers,
            heads: self.st_heads,
            ffn_mult: self.st_ffn_mult,
            grid: (self.image_size[0] / 8, self.image_size[1] / 8),
        }
    }
}

#[derive(Clone)]
enum Separator<T: Element> {
    Laplacian,
    /// Stride 1, 2, 2, 2 single-channel convolutions.
    Strided([Conv<T>; 4]),
}

pub struct Intermediates<T: Element> {
    pub levels: [Tensor<T>; 3],
    pub base: Tensor<T>,
    pub hfb: [Tensor<T>; 3],
    pub prior: Tensor<T>,
    pub fgm: Vec<FgmIntermediates<T>>,
    pub decoder_states: Vec<Tensor<T>>,
    pub prob: Tensor<T>,
}

pub struct Lfinet<T: Element> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    separator: Separator<T>,
    hfb: [Hfb<T>; 3],
    st: SpatialTransformer<T>,
    fgm: [Fgm<T>; 3],
    decoder: Decoder<T>,
}

impl<T: Element> std::fmt::Debug for Lfinet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lfinet").field("config", &self.config).field("params", &self.store.num_scalars()).finish()
    }
}

impl<T: Element> Lfinet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(seed);
        let separator = if config.ablated(Ablation::Lms) {
            let strided = |s| Conv2dParams { stride: s, padding: 1, dilation: 1, groups: 1 };
            Separator::Strided([
                b.conv("stem0", 1, 1, 3, strided(1))?,
                b.conv("stem1", 1, 1, 3, strided(2))?,
                b.conv("stem2", 1, 1, 3, strided(2))?,
                b.conv("stem3", 1, 1, 3, strided(2))?,
            ])
        } else {
            Separator::Laplacian
        };
        let ch = config.channels;
        let plain_hfb = config.ablated(Ablation::Hfb);
        let hfb = [
            Hfb::new(&mut b, "hfb0", 1, ch[0], plain_hfb)?,
            Hfb::new(&mut b, "hfb1", 1, ch[1], plain_hfb)?,
            Hfb::new(&mut b, "hfb2", 1, ch[2], plain_hfb)?,
        ];
        let st = SpatialTransformer::new(&mut b, "st", 1, config.st_config(), config.ablated(Ablation::St))?;
        let equal = config.ablated(Ablation::Fgm);
        let d = config.st_dim;
        let fgm = [
            Fgm::new(&mut b, "fgm0", ch[0], d, equal)?,
            Fgm::new(&mut b, "fgm1", ch[1], d, equal)?,
            Fgm::new(&mut b, "fgm2", ch[2], d, equal)?,
        ];
        let decoder = if config.ablated(Ablation::Prd) {
            Decoder::flat(&mut b, "dec", ch, d)?
        } else {
            Decoder::progressive(&mut b, "dec", ch, d)?
        };
        Ok(Lfinet { config, store: b.finish(), separator, hfb, st, fgm, decoder })
    }

    /// N×1×H×W image in, N×1×H×W road probabilities out.
    pub fn forward(&self, image: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        Ok(self.forward_detailed(image, mode)?.prob)
    }

    pub fn forward_detailed(&self, image: &Tensor<T>, mode: NormMode) -> Result<Intermediates<T>> {
        let (_, c, h, w) = image.dims4("lfinet")?;
        check_size(h, w)?;
        if c != 1 || [h, w] != self.config.image_size {
            return Err(invalid(format!(
                "model expects 1x{}x{} images, got {c}x{h}x{w}",
                self.config.image_size[0], self.config.image_size[1]
            )));
        }
        let (levels, base) = match &self.separator {
            Separator::Laplacian => {
                let d = laplacian_decompose(image)?;
                (d.levels, d.base)
            }
            Separator::Strided(convs) => {
                let l0 = convs[0].forward(image)?;
                let l1 = convs[1].forward(&l0)?;
                let l2 = convs[2].forward(&l1)?;
                let base = convs[3].forward(&l2)?;
                ([l0, l1, l2], base)
            }
        };
        let hfb = [
            self.hfb[0].forward(&levels[0], mode)?,
            self.hfb[1].forward(&levels[1], mode)?,
            self.hfb[2].forward(&levels[2], mode)?,
        ];
        let prior = self.st.forward(&base)?;
        let fgm = (0..3)
            .map(|l| self.fgm[l].forward_detailed(&hfb[l], &prior, l, mode))
            .collect::<Result<Vec<_>>>()?;
        let fused = [fgm[0].output.clone(), fgm[1].output.clone(), fgm[2].output.clone()];
        let out = self.decoder.forward(&prior, &fused, mode)?;
        Ok(Intermediates { levels, base, hfb, prior, fgm, decoder_states: out.states, prob: out.prob })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lfinet_tensor::ops::concat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(ablate: &[Ablation]) -> ModelConfig {
        ModelConfig {
            image_size: [16, 16],
            channels: [8, 8, 16],
            st_dim: 16,
            st_layers: 1,
            st_heads: 2,
            st_ffn_mult: 2,
            ablate: ablate.iter().copied().collect(),
        }
    }

    #[test]
    fn full_size_shape_contract() {
        let m = Lfinet::<f32>::new(ModelConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 64, 64], 0.0, 1.0, &mut rng);
        let i = m.forward_detailed(&x, NormMode::Train).unwrap();
        assert_eq!(i.prob.shape(), &[1, 1, 64, 64]);
        assert_eq!(i.prior.shape(), &[1, 128, 8, 8]);
        let chans: Vec<_> = i.decoder_states.iter().map(|s| s.shape()[1]).collect();
        assert_eq!(chans, vec![128, 64, 32]);
        assert!(i.prob.to_vec().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        for ablate in [vec![], vec![Ablation::Lms, Ablation::Prd], vec![Ablation::Hfb, Ablation::Fgm, Ablation::St]] {
            let m = Lfinet::<f64>::new(small(&ablate), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x = Tensor::<f64>::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng);
            m.forward(&x, NormMode::Train).unwrap().sum().backward().unwrap();
            for (name, p) in m.store.params() {
                let g = p.grad().unwrap_or_else(|| panic!("{name} unreachable with {ablate:?}"));
                assert!(g.iter().any(|&v| v != 0.0), "{name} has zero gradient with {ablate:?}");
            }
        }
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        let m = Lfinet::<f32>::new(small(&[]), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::<f32>::rand_uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng);
        let b = Tensor::<f32>::rand_uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng);
        let ya = m.forward(&a, NormMode::Eval).unwrap().to_vec();
        assert_eq!(ya, m.forward(&a, NormMode::Eval).unwrap().to_vec());
        let yb = m.forward(&b, NormMode::Eval).unwrap().to_vec();
        let both = m.forward(&concat(&[&a, &b], 0).unwrap(), NormMode::Eval).unwrap().to_vec();
        let sep: Vec<f32> = ya.into_iter().chain(yb).collect();
        let diff = both.iter().zip(&sep).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(diff <= 1e-6, "{diff}");
    }

    #[test]
    fn constant_image_gives_zero_detail_inputs() {
        let m = Lfinet::<f32>::new(small(&[]), 3).unwrap();
        let i = m.forward_detailed(&Tensor::full(&[1, 1, 16, 16], 0.6), NormMode::Eval).unwrap();
        for l in &i.levels {
            assert!(l.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn wrong_size_rejected() {
        let m = Lfinet::<f32>::new(small(&[]), 0).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 1, 24, 16]), NormMode::Eval).unwrap_err();
        assert!(err.to_string().contains("expects 1x16x16"), "{err}");
    }
}
