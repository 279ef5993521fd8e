//! Layout operations: reshape, permute, concatenation and slicing.

use std::ops::Range;

use crate::element::Element;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{numel, Tensor};

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn permute_data<T: Element>(src: &[T], shape: &[usize], dims: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = dims.iter().map(|&d| shape[d]).collect();
    let src_strides: Vec<usize> = dims.iter().map(|&d| in_strides[d]).collect();
    let mut out = Vec::with_capacity(src.len());
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..src.len() {
        out.push(src[off]);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op("reshape", self.to_vec(), shape.to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `dims[i]`.
    pub fn permute(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if dims.len() != nd || dims.iter().any(|&d| d >= nd || std::mem::replace(&mut seen[d], true)) {
            return Err(invalid("permute", format!("{dims:?} is not a permutation of {nd} axes")));
        }
        let in_shape = self.shape().to_vec();
        let (data, out_shape) = permute_data(&self.data(), &in_shape, dims);
        let mut inverse = vec![0; nd];
        for (i, &d) in dims.iter().enumerate() {
            inverse[d] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op("permute", data, out_shape, vec![self.clone()], move |g, _| {
            vec![Some(permute_data(g, &grad_shape, &inverse).0)]
        }))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err(
                "narrow",
                format!("range {start}..{} outside axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let data = {
            let d = self.data();
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                out.extend_from_slice(&d[base..base + len * inner]);
            }
            out
        };
        Ok(Tensor::from_op("narrow", data, out_shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| invalid("concat", "no inputs"))?;
    let base = first.shape().to_vec();
    if axis >= base.len() {
        return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
    }
    for x in xs {
        let s = x.shape();
        let agrees = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !agrees {
            let dim = s
                .iter()
                .zip(&base)
                .enumerate()
                .find(|(i, (a, b))| *i != axis && a != b)
                .map(|(i, _)| i);
            return Err(shape_err(
                "concat",
                format!("{s:?} vs {base:?} disagree at dimension {dim:?} (concat axis {axis})"),
            ));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let extents: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    {
        let datas: Vec<_> = xs.iter().map(|x| x.data()).collect();
        for o in 0..outer {
            for (d, &e) in datas.iter().zip(&extents) {
                data.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
    }
    let inputs: Vec<Tensor<T>> = xs.iter().map(|&x| x.clone()).collect();
    Ok(Tensor::from_op("concat", data, out_shape, inputs, move |g, inputs| {
        let mut grads: Vec<Vec<T>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
        let mut off = 0;
        for _ in 0..outer {
            for (gi, &e) in grads.iter_mut().zip(&extents) {
                gi.extend_from_slice(&g[off..off + e * inner]);
                off += e * inner;
            }
        }
        grads
            .into_iter()
            .zip(inputs)
            .map(|(gi, x)| x.requires_grad().then_some(gi))
            .collect()
    }))
}

/// Splits the channel axis of an N×C×H×W tensor. `ranges` must partition
/// `0..C` in order, without gaps or overlap.
pub fn slice_channels<T: Element>(x: &Tensor<T>, ranges: &[Range<usize>]) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = x.dims4("slice_channels")?;
    let mut cursor = 0;
    for r in ranges {
        if r.start != cursor || r.end <= r.start {
            return Err(invalid(
                "slice_channels",
                format!("range {r:?} leaves a gap or overlap at channel {cursor}"),
            ));
        }
        cursor = r.end;
    }
    if cursor != c {
        return Err(invalid("slice_channels", format!("ranges cover {cursor} of {c} channels")));
    }
    ranges.iter().map(|r| x.narrow(1, r.start, r.len())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes() {
        let x = Tensor::<f64>::new((0..6).map(|v| v as f64).collect(), &[2, 3]).unwrap();
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn slice_rejects_gap_and_overlap() {
        let x = Tensor::<f64>::zeros(&[1, 8, 2, 2]);
        assert!(slice_channels(&x, &[0..1, 2..8]).is_err());
        assert!(slice_channels(&x, &[0..3, 2..8]).is_err());
        assert!(slice_channels(&x, &[0..3, 3..7]).is_err());
        let parts = slice_channels(&x, &[0..1, 1..4, 4..8]).unwrap();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        assert_eq!(widths, vec![1, 3, 4]);
    }

    #[test]
    fn concat_names_disagreeing_dimension() {
        let a = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 2, 4, 3]);
        let err = concat(&[&a, &b], 1).unwrap_err().to_string();
        assert!(err.contains("dimension Some(3)"), "{err}");
    }
}
