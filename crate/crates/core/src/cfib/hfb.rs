//! High-frequency block: projection, cascaded dilated depthwise
//! convolutions over a 1:3:4 channel split, pointwise aggregation and
//! squeeze-excite reweighting with a residual to the projection.

use lfinet_tensor::ops::{concat, global_avg_pool, slice_channels, NormMode};
use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};
use crate::layers::{BatchNorm, Builder, Conv};

pub const SPLIT_RATIO: [usize; 3] = [1, 3, 4];
/// (kernel, dilation) for the base, F_b and F_c depthwise stages.
pub const KERNELS: [(usize, usize); 3] = [(11, 1), (5, 2), (7, 3)];
pub const REDUCTION: usize = 4;

/// Channel counts of the three split groups for width `c`.
pub fn split_sizes(c: usize) -> Result<[usize; 3]> {
    if c == 0 || !c.is_multiple_of(8) {
        return Err(invalid(format!("high-frequency block width {c} is not divisible by 8")));
    }
    let unit = c / 8;
    Ok(SPLIT_RATIO.map(|r| r * unit))
}

#[derive(Clone)]
pub struct Hfb<T: Element> {
    pub channels: usize,
    pub proj: Conv<T>,
    pub proj_bn: BatchNorm<T>,
    /// Absent when the block is reduced to its projection.
    pub refine: Option<Refine<T>>,
}

#[derive(Clone)]
pub struct Refine<T: Element> {
    pub dw_base: Conv<T>,
    pub dw_b: Conv<T>,
    pub dw_c: Conv<T>,
    pub fuse: Conv<T>,
    pub se_reduce: Conv<T>,
    pub se_expand: Conv<T>,
}

pub struct HfbIntermediates<T: Element> {
    pub projected: Tensor<T>,
    pub f0: Tensor<T>,
    pub splits: [Tensor<T>; 3],
    pub f1: Tensor<T>,
    pub f2: Tensor<T>,
    pub l_cat: Tensor<T>,
    pub gate: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T: Element> Hfb<T> {
    pub fn new(b: &mut Builder<T>, name: &str, in_channels: usize, channels: usize, projection_only: bool) -> Result<Self> {
        let [_, cb, cc] = split_sizes(channels)?;
        let squeezed = (channels / REDUCTION).max(1);
        let proj = b.conv_before_norm(&format!("{name}.proj"), in_channels, channels, 3, 1, 1)?;
        let proj_bn = b.batch_norm(&format!("{name}.proj_bn"), channels)?;
        let refine = if projection_only {
            None
        } else {
            Some(Refine {
                dw_base: b.depthwise(&format!("{name}.dw_base"), channels, KERNELS[0].0, KERNELS[0].1)?,
                dw_b: b.depthwise(&format!("{name}.dw_b"), cb, KERNELS[1].0, KERNELS[1].1)?,
                dw_c: b.depthwise(&format!("{name}.dw_c"), cc, KERNELS[2].0, KERNELS[2].1)?,
                fuse: b.pointwise(&format!("{name}.fuse"), channels, channels)?,
                se_reduce: b.pointwise(&format!("{name}.se_reduce"), channels, squeezed)?,
                se_expand: b.pointwise(&format!("{name}.se_expand"), squeezed, channels)?,
            })
        };
        Ok(Hfb { channels, proj, proj_bn, refine })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        if self.refine.is_none() {
            return self.project(x, mode);
        }
        Ok(self.forward_detailed(x, mode)?.output)
    }

    fn project(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        Ok(self.proj_bn.forward(&self.proj.forward(x)?, mode)?.relu())
    }

    pub fn forward_detailed(&self, x: &Tensor<T>, mode: NormMode) -> Result<HfbIntermediates<T>> {
        let r = self.refine.as_ref().ok_or_else(|| invalid("high-frequency block was built without refinement"))?;
        let projected = self.project(x, mode)?;
        let f0 = r.dw_base.forward(&projected)?;
        let [ca, cb, _] = split_sizes(self.channels)?;
        let parts = slice_channels(&f0, &[0..ca, ca..ca + cb, ca + cb..self.channels])?;
        let f1 = r.dw_b.forward(&parts[1])?;
        let f2 = r.dw_c.forward(&parts[2])?;
        let l_cat = r.fuse.forward(&concat(&[&parts[0], &f1, &f2], 1)?)?;
        let gate = r.se_expand.forward(&r.se_reduce.forward(&global_avg_pool(&l_cat)?)?.gelu())?.sigmoid();
        let output = l_cat.mul(&gate)?.add(&projected)?;
        let splits = [parts[0].clone(), parts[1].clone(), parts[2].clone()];
        Ok(HfbIntermediates { projected, f0, splits, f1, f2, l_cat, gate, output })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lfinet_tensor::ops::{batch_norm2d, conv2d, Conv2dParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_follows_one_three_four() {
        assert_eq!(split_sizes(64).unwrap(), [8, 24, 32]);
        assert_eq!(split_sizes(32).unwrap(), [4, 12, 16]);
        assert_eq!(split_sizes(128).unwrap(), [16, 48, 64]);
        assert!(split_sizes(60).unwrap_err().to_string().contains("divisible by 8"));
    }

    #[test]
    fn intermediates_have_declared_shapes() {
        let mut b = Builder::<f32>::new(0);
        let h = Hfb::new(&mut b, "hfb", 1, 64, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 24, 16], -1.0, 1.0, &mut rng);
        let i = h.forward_detailed(&x, NormMode::Train).unwrap();
        assert_eq!(i.splits[0].shape(), &[1, 8, 24, 16]);
        assert_eq!(i.splits[1].shape(), &[1, 24, 24, 16]);
        assert_eq!(i.splits[2].shape(), &[1, 32, 24, 16]);
        assert_eq!(i.f1.shape(), i.splits[1].shape());
        assert_eq!(i.f2.shape(), i.splits[2].shape());
        assert_eq!(i.l_cat.shape(), &[1, 64, 24, 16]);
        assert_eq!(i.output.shape(), &[1, 64, 24, 16]);
    }

    #[test]
    fn saturated_gate_reduces_to_lcat_plus_projection() {
        let mut b = Builder::<f64>::new(4);
        let h = Hfb::new(&mut b, "hfb", 1, 16, false).unwrap();
        let r = h.refine.as_ref().unwrap();
        r.se_expand.w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        r.se_expand.b.as_ref().unwrap().data_mut().iter_mut().for_each(|v| *v = 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::rand_uniform(&[2, 1, 8, 8], -1.0, 1.0, &mut rng);
        let got = h.forward(&x, NormMode::Eval).unwrap().to_vec();

        // by-hand composition of the primitives
        let c = |x: &Tensor<f64>, conv: &Conv<f64>, p: Conv2dParams| conv2d(x, &conv.w, conv.b.as_ref(), p).unwrap();
        let bn = &h.proj_bn;
        let proj = batch_norm2d(&c(&x, &h.proj, Conv2dParams::same(3, 1, 1)), &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, NormMode::Eval)
            .unwrap()
            .relu();
        let f0 = c(&proj, &r.dw_base, Conv2dParams::same(11, 1, 16));
        let fa = f0.narrow(1, 0, 2).unwrap();
        let fb = c(&f0.narrow(1, 2, 6).unwrap(), &r.dw_b, Conv2dParams::same(5, 2, 6));
        let fc = c(&f0.narrow(1, 8, 8).unwrap(), &r.dw_c, Conv2dParams::same(7, 3, 8));
        let lcat = c(&concat(&[&fa, &fb, &fc], 1).unwrap(), &r.fuse, Conv2dParams::default());
        let want = lcat.add(&proj).unwrap().to_vec();
        assert_eq!(got, want);
    }

    #[test]
    fn zeroed_aggregation_leaves_projection() {
        let mut b = Builder::<f32>::new(9);
        let h = Hfb::new(&mut b, "hfb", 1, 8, false).unwrap();
        h.refine.as_ref().unwrap().fuse.w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 8, 8], -1.0, 1.0, &mut rng);
        let i = h.forward_detailed(&x, NormMode::Train).unwrap();
        assert_eq!(i.output.to_vec(), i.projected.to_vec());
    }
}
