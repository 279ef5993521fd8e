//! Spatial transformer over the low-frequency base: pointwise embedding,
//! learned positions and pre-norm encoder layers on the flattened tokens.

use lfinet_tensor::ops::scaled_dot_attention;
use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};
use crate::layers::{Builder, Conv, LayerNorm, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Token grid (rows, cols) at one eighth of the input resolution.
    pub grid: (usize, usize),
}

impl StConfig {
    pub fn for_image(h: usize, w: usize) -> Self {
        StConfig { dim: 128, layers: 2, heads: 4, ffn_mult: 4, grid: (h / 8, w / 8) }
    }
}

#[derive(Clone)]
pub struct EncoderLayer<T: Element> {
    pub norm1: LayerNorm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub heads: usize,
}

impl<T: Element> EncoderLayer<T> {
    pub fn new(b: &mut Builder<T>, name: &str, dim: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid(format!("embedding width {dim} is not divisible by {heads} heads")));
        }
        Ok(EncoderLayer {
            norm1: b.layer_norm(&format!("{name}.norm1"), dim)?,
            q: b.linear(&format!("{name}.q"), dim, dim)?,
            // a key bias shifts every score in a softmax row equally
            k: b.linear_no_bias(&format!("{name}.k"), dim, dim)?,
            v: b.linear(&format!("{name}.v"), dim, dim)?,
            o: b.linear(&format!("{name}.o"), dim, dim)?,
            norm2: b.layer_norm(&format!("{name}.norm2"), dim)?,
            ff1: b.linear(&format!("{name}.ff1"), dim, dim * ffn_mult)?,
            ff2: b.linear(&format!("{name}.ff2"), dim * ffn_mult, dim)?,
            heads,
        })
    }

    /// `x + MHA(LN(x))`, then `x + FFN(LN(x))` on `[N, S, D]` tokens.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm1.forward(x)?;
        let att = scaled_dot_attention(&self.q.forward(&h)?, &self.k.forward(&h)?, &self.v.forward(&h)?, self.heads)?;
        let x = x.add(&self.o.forward(&att)?)?;
        let h = self.norm2.forward(&x)?;
        let ff = self.ff2.forward(&self.ff1.forward(&h)?.gelu())?;
        Ok(x.add(&ff)?)
    }
}

#[derive(Clone)]
pub struct SpatialTransformer<T: Element> {
    pub config: StConfig,
    pub embed: Conv<T>,
    /// Absent when the transformer is ablated to its embedding.
    pub pos: Option<Tensor<T>>,
    pub layers: Vec<EncoderLayer<T>>,
}

impl<T: Element> SpatialTransformer<T> {
    pub fn new(b: &mut Builder<T>, name: &str, in_channels: usize, config: StConfig, embed_only: bool) -> Result<Self> {
        let embed = b.pointwise(&format!("{name}.embed"), in_channels, config.dim)?;
        if embed_only {
            return Ok(SpatialTransformer { config, embed, pos: None, layers: Vec::new() });
        }
        let tokens = config.grid.0 * config.grid.1;
        let pos = b.normal(&format!("{name}.pos"), &[tokens, config.dim], 0.02)?;
        let layers = (0..config.layers)
            .map(|i| EncoderLayer::new(b, &format!("{name}.layer{i}"), config.dim, config.heads, config.ffn_mult))
            .collect::<Result<_>>()?;
        Ok(SpatialTransformer { config, embed, pos: Some(pos), layers })
    }

    pub fn forward(&self, base: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, _, h, w) = base.dims4("spatial_transformer")?;
        let e = self.embed.forward(base)?;
        let Some(pos) = &self.pos else {
            return Ok(e);
        };
        if (h, w) != self.config.grid {
            return Err(invalid(format!(
                "low-frequency base is {h}x{w} but the positional table covers {}x{}",
                self.config.grid.0, self.config.grid.1
            )));
        }
        let d = self.config.dim;
        let mut x = e.reshape(&[n, d, h * w])?.permute(&[0, 2, 1])?.add(pos)?;
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x.permute(&[0, 2, 1])?.reshape(&[n, d, h, w])?)
    }
}
