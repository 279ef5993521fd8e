//! Parameterized building blocks and their initialization.

use lfinet_tensor::ops::{batch_norm2d, conv2d, conv_transpose2d, layer_norm, linear, Conv2dParams, NormMode};
use lfinet_tensor::{Element, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;

/// Registers parameters into a store, drawing initial values from a seeded
/// generator in registration order.
pub struct Builder<T: Element> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Element> Builder<T> {
    pub fn new(seed: u64) -> Self {
        Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }

    /// Kaiming-uniform: `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("positive bound");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        Ok(self.store.register_param(name, Tensor::new(data, shape)?)?)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor<T>> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        Ok(self.store.register_param(name, Tensor::new(data, shape)?)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor<T>> {
        Ok(self.store.register_param(name, Tensor::full(shape, T::lit(value)))?)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, p: Conv2dParams) -> Result<Conv<T>> {
        let mut c = self.conv_weight(name, cin, cout, k, p)?;
        c.b = Some(self.constant(&format!("{name}.bias"), &[cout], 0.0)?);
        Ok(c)
    }

    fn conv_weight(&mut self, name: &str, cin: usize, cout: usize, k: usize, p: Conv2dParams) -> Result<Conv<T>> {
        let cin_g = cin / p.groups;
        let w = self.kaiming(&format!("{name}.weight"), &[cout, cin_g, k, k], cin_g * k * k)?;
        Ok(Conv { w, b: None, p })
    }

    /// Same-padded convolution without bias, for outputs that go straight
    /// into batch norm (which subtracts any per-channel offset).
    pub fn conv_before_norm(&mut self, name: &str, cin: usize, cout: usize, k: usize, dilation: usize, groups: usize) -> Result<Conv<T>> {
        self.conv_weight(name, cin, cout, k, Conv2dParams::same(k, dilation, groups))
    }

    /// Same-padded convolution, stride 1.
    pub fn conv_same(&mut self, name: &str, cin: usize, cout: usize, k: usize, dilation: usize, groups: usize) -> Result<Conv<T>> {
        self.conv(name, cin, cout, k, Conv2dParams::same(k, dilation, groups))
    }

    pub fn depthwise(&mut self, name: &str, c: usize, k: usize, dilation: usize) -> Result<Conv<T>> {
        self.conv_same(name, c, c, k, dilation, c)
    }

    pub fn pointwise(&mut self, name: &str, cin: usize, cout: usize) -> Result<Conv<T>> {
        self.conv_same(name, cin, cout, 1, 1, 1)
    }

    pub fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<ConvTranspose<T>> {
        // each output pixel sees cin·(k/stride)² taps
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        let w = self.kaiming(&format!("{name}.weight"), &[cin, cout, k, k], fan_in)?;
        let b = self.constant(&format!("{name}.bias"), &[cout], 0.0)?;
        Ok(ConvTranspose { w, b, stride })
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> Result<BatchNorm<T>> {
        Ok(BatchNorm {
            gamma: self.constant(&format!("{name}.gamma"), &[c], 1.0)?,
            beta: self.constant(&format!("{name}.beta"), &[c], 0.0)?,
            running_mean: self.store.register_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?,
            running_var: self.store.register_buffer(&format!("{name}.running_var"), Tensor::ones(&[c]))?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> Result<LayerNorm<T>> {
        Ok(LayerNorm {
            gamma: self.constant(&format!("{name}.gamma"), &[d], 1.0)?,
            beta: self.constant(&format!("{name}.beta"), &[d], 0.0)?,
        })
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear<T>> {
        let mut l = self.linear_no_bias(name, din, dout)?;
        l.b = Some(self.constant(&format!("{name}.bias"), &[dout], 0.0)?);
        Ok(l)
    }

    pub fn linear_no_bias(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear<T>> {
        Ok(Linear { w: self.kaiming(&format!("{name}.weight"), &[din, dout], din)?, b: None })
    }
}

#[derive(Clone)]
pub struct Conv<T: Element> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
    pub p: Conv2dParams,
}

impl<T: Element> Conv<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(conv2d(x, &self.w, self.b.as_ref(), self.p)?)
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }
}

#[derive(Clone)]
pub struct ConvTranspose<T: Element> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
}

impl<T: Element> ConvTranspose<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(conv_transpose2d(x, &self.w, Some(&self.b), self.stride)?)
    }
}

#[derive(Clone)]
pub struct BatchNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Element> BatchNorm<T> {
    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        Ok(batch_norm2d(x, &self.gamma, &self.beta, &self.running_mean, &self.running_var, mode)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(layer_norm(x, &self.gamma, &self.beta)?)
    }
}

#[derive(Clone)]
pub struct Linear<T: Element> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(linear(x, &self.w, self.b.as_ref())?)
    }
}
