//! Batch and layer normalization.

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormMode {
    #[default]
    Train,
    Eval,
}

/// Per-channel batch normalization of an N×C×H×W tensor.
///
/// Train mode normalizes with biased batch statistics and folds them into
/// the running estimates (unbiased variance, momentum [`BN_MOMENTUM`]).
/// Eval mode normalizes with the running estimates.
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: NormMode,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("batch_norm2d")?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c] {
            return Err(shape_err(
                "batch_norm2d",
                format!("{name} has shape {:?}, input has {c} channels", t.shape()),
            ));
        }
    }
    let hw = h * w;
    let count = n * hw;
    let eps = T::lit(NORM_EPS);
    let (mean, var) = match mode {
        NormMode::Train => {
            let d = x.data();
            let inv = T::one() / T::lit(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    s += d[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].iter().copied().sum::<T>();
                }
                let m = s * inv;
                let mut v = T::zero();
                for ni in 0..n {
                    for &xv in &d[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                        v += (xv - m) * (xv - m);
                    }
                }
                mean[ci] = m;
                var[ci] = v * inv;
            }
            let momentum = T::lit(BN_MOMENTUM);
            let unbias = if count > 1 { T::lit(count as f64 / (count - 1) as f64) } else { T::one() };
            let mut rm = running_mean.data_mut();
            let mut rv = running_var.data_mut();
            for ci in 0..c {
                rm[ci] = (T::one() - momentum) * rm[ci] + momentum * mean[ci];
                rv[ci] = (T::one() - momentum) * rv[ci] + momentum * var[ci] * unbias;
            }
            (mean, var)
        }
        NormMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (xhat, out) = {
        let d = x.data();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = Vec::with_capacity(d.len());
        let mut out = Vec::with_capacity(d.len());
        for (p, plane) in d.chunks_exact(hw).enumerate() {
            let ci = p % c;
            for &xv in plane {
                let xh = (xv - mean[ci]) * inv_std[ci];
                xhat.push(xh);
                out.push(gd[ci] * xh + bd[ci]);
            }
        }
        (xhat, out)
    };
    let inputs = vec![x.clone(), gamma.clone(), beta.clone()];
    Ok(Tensor::from_op("batch_norm2d", out, vec![n, c, h, w], inputs, move |g, inputs| {
        let gd = inputs[1].data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (p, (gp, xp)) in g.chunks_exact(hw).zip(xhat.chunks_exact(hw)).enumerate() {
            let ci = p % c;
            for (&gv, &xh) in gp.iter().zip(xp) {
                dgamma[ci] += gv * xh;
                dbeta[ci] += gv;
            }
        }
        let gx = inputs[0].requires_grad().then(|| {
            let mut gx = vec![T::zero(); g.len()];
            match mode {
                NormMode::Train => {
                    // dxhat = g·gamma; dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let m = T::lit(count as f64);
                    for (p, ((gp, xp), out)) in
                        g.chunks_exact(hw).zip(xhat.chunks_exact(hw)).zip(gx.chunks_exact_mut(hw)).enumerate()
                    {
                        let ci = p % c;
                        let sum_dxhat = dbeta[ci] * gd[ci];
                        let sum_dxhat_xhat = dgamma[ci] * gd[ci];
                        let k = inv_std[ci] / m;
                        for ((o, &gv), &xh) in out.iter_mut().zip(gp).zip(xp) {
                            *o = k * (m * gv * gd[ci] - sum_dxhat - xh * sum_dxhat_xhat);
                        }
                    }
                }
                NormMode::Eval => {
                    for (p, (gp, out)) in g.chunks_exact(hw).zip(gx.chunks_exact_mut(hw)).enumerate() {
                        let ci = p % c;
                        let k = gd[ci] * inv_std[ci];
                        for (o, &gv) in out.iter_mut().zip(gp) {
                            *o = gv * k;
                        }
                    }
                }
            }
            gx
        });
        vec![gx, inputs[1].requires_grad().then_some(dgamma), inputs[2].requires_grad().then_some(dbeta)]
    }))
}

/// Layer normalization over the last axis with affine parameters of that
/// axis' length.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let d = *x.shape().last().ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [d] {
            return Err(shape_err("layer_norm", format!("{name} has shape {:?}, last axis is {d}", t.shape())));
        }
    }
    let eps = T::lit(NORM_EPS);
    let inv_d = T::one() / T::lit(d as f64);
    let rows = x.numel() / d;
    let mut xhat = Vec::with_capacity(x.numel());
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(x.numel());
    {
        let xd = x.data();
        let (gd, bd) = (gamma.data(), beta.data());
        for row in xd.chunks_exact(d) {
            let m = row.iter().copied().sum::<T>() * inv_d;
            let v = row.iter().map(|&v| (v - m) * (v - m)).sum::<T>() * inv_d;
            let is = T::one() / (v + eps).sqrt();
            inv_std.push(is);
            for (j, &xv) in row.iter().enumerate() {
                let xh = (xv - m) * is;
                xhat.push(xh);
                out.push(gd[j] * xh + bd[j]);
            }
        }
    }
    let inputs = vec![x.clone(), gamma.clone(), beta.clone()];
    Ok(Tensor::from_op("layer_norm", out, x.shape().to_vec(), inputs, move |g, inputs| {
        let gd = inputs[1].data();
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        let mut gx = vec![T::zero(); g.len()];
        for (r, ((gr, xr), out)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(gx.chunks_exact_mut(d)).enumerate() {
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for j in 0..d {
                dgamma[j] += gr[j] * xr[j];
                dbeta[j] += gr[j];
                let dxh = gr[j] * gd[j];
                s1 += dxh;
                s2 += dxh * xr[j];
            }
            let k = inv_std[r] * inv_d;
            for j in 0..d {
                out[j] = k * (T::lit(d as f64) * gr[j] * gd[j] - s1 - xr[j] * s2);
            }
        }
        vec![
            inputs[0].requires_grad().then_some(gx),
            inputs[1].requires_grad().then_some(dgamma),
            inputs[2].requires_grad().then_some(dbeta),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn_params(c: usize) -> [Tensor<f64>; 4] {
        [Tensor::ones(&[c]), Tensor::zeros(&[c]), Tensor::zeros(&[c]), Tensor::ones(&[c])]
    }

    #[test]
    fn normalized_input_passes_through() {
        // per channel: values ±1 → mean 0, biased variance 1
        let x = Tensor::<f64>::new(vec![1.0, -1.0, -1.0, 1.0, 2.0, 2.0, 2.0, 2.0], &[1, 2, 2, 2]).unwrap();
        let [g, b, rm, rv] = bn_params(2);
        let y = batch_norm2d(&x, &g, &b, &rm, &rv, NormMode::Train).unwrap();
        let yv = y.to_vec();
        for (a, e) in yv[..4].iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((a - e).abs() < 1e-5);
        }
        // constant channel collapses to beta
        assert!(yv[4..].iter().all(|v| v.abs() < 1e-12));
        // running stats moved by momentum
        assert!((rm.to_vec()[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor::<f64>::new((0..16).map(|v| (v as f64).sin()).collect(), &[2, 2, 2, 2]).unwrap();
        let g = Tensor::zeros(&[2]);
        let b = Tensor::full(&[2], 7.0);
        for mode in [NormMode::Train, NormMode::Eval] {
            let y = batch_norm2d(&x, &g, &b, &Tensor::zeros(&[2]), &Tensor::ones(&[2]), mode).unwrap();
            assert!(y.to_vec().iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let [g, b, rm, rv] = bn_params(2);
        let err = batch_norm2d(&x, &g, &b, &rm, &rv, NormMode::Train).unwrap_err();
        assert!(err.to_string().contains("3 channels"));
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0, -2.0, 0.0, 2.0, 8.0], &[2, 4]).unwrap();
        let y = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4])).unwrap().to_vec();
        for row in y.chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-4);
        }
    }
}
