//! Elementwise arithmetic with right-aligned broadcasting, scalar arithmetic
//! and activations.

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::{numel, Tensor};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` expressed in the index space of `out`; broadcast axes
/// get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching linear offsets of the two
/// operands.
pub(crate) fn visit2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
    let sa = a.shape().to_vec();
    let sb = b.shape().to_vec();
    let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| {
        shape_err(op.name(), format!("cannot broadcast {sa:?} with {sb:?}"))
    })?;
    let same = sa == sb;
    let stride_a = broadcast_strides(&sa, &out_shape);
    let stride_b = broadcast_strides(&sb, &out_shape);
    let data = {
        let (da, db) = (a.data(), b.data());
        if same {
            da.iter().zip(db.iter()).map(|(&x, &y)| op.apply(x, y)).collect()
        } else {
            let mut out = vec![T::zero(); numel(&out_shape)];
            visit2(&out_shape, &stride_a, &stride_b, |o, ia, ib| out[o] = op.apply(da[ia], db[ib]));
            out
        }
    };
    let os = out_shape.clone();
    Ok(Tensor::from_op(op.name(), data, out_shape, vec![a.clone(), b.clone()], move |g, inputs| {
        let (a, b) = (&inputs[0], &inputs[1]);
        let mut ga = a.requires_grad().then(|| vec![T::zero(); a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![T::zero(); b.numel()]);
        let (da, db) = (a.data(), b.data());
        let mut step = |o: usize, ia: usize, ib: usize| {
            let go = g[o];
            let (dla, dlb) = match op {
                BinOp::Add => (go, go),
                BinOp::Sub => (go, -go),
                BinOp::Mul => (go * db[ib], go * da[ia]),
                BinOp::Div => (go / db[ib], -go * da[ia] / (db[ib] * db[ib])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] += dla;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += dlb;
            }
        };
        if same {
            for o in 0..g.len() {
                step(o, o, o);
            }
        } else {
            visit2(&os, &stride_a, &stride_b, step);
        }
        vec![ga, gb]
    }))
}

/// Unary op with derivative expressed through input `x` and output `y`.
fn unary<T: Element>(
    x: &Tensor<T>,
    name: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let y: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let saved = y.clone();
    Tensor::from_op(name, y, x.shape().to_vec(), vec![x.clone()], move |g, inputs| {
        let xd = inputs[0].data();
        let gx = g.iter().zip(xd.iter()).zip(&saved).map(|((&g, &x), &y)| g * df(x, y)).collect();
        vec![Some(gx)]
    })
}

#[inline]
pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn gelu_scalar<T: Element>(v: T) -> T {
    let half = T::lit(0.5);
    half * v * (T::one() + (v * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Element>(v: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (v * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(v * v) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + v * pdf
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => unary(
            x,
            "relu",
            // NaN passes through so divergence stays visible
            |v| if v < T::zero() { T::zero() } else { v },
            |v, _| if v > T::zero() { T::one() } else { T::zero() },
        ),
        // exact erf form
        Activation::Gelu => unary(x, "gelu", gelu_scalar, |v, _| gelu_grad(v)),
        Activation::Sigmoid => unary(x, "sigmoid", sigmoid_scalar, |_, y| y * (T::one() - y)),
    }
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Div)
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        unary(self, "scale", move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        unary(self, "add_scalar", move |v| v + s, |_, _| T::one())
    }

    /// `s - self`
    pub fn rsub_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        unary(self, "rsub_scalar", move |v| s - v, |_, _| -T::one())
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, "ln", |v| v.ln(), |v, _| T::one() / v)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |v| v.exp(), |_, y| y)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        unary(
            self,
            "clamp",
            move |v| if v < lo { lo } else if v > hi { hi } else { v },
            move |v, _| if v >= lo && v <= hi { T::one() } else { T::zero() },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        activation(self, Activation::Relu)
    }

    pub fn gelu(&self) -> Tensor<T> {
        activation(self, Activation::Gelu)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        activation(self, Activation::Sigmoid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), s).unwrap()
    }

    #[test]
    fn activation_reference_values() {
        let x = t(&[-1.0, 3.0, 0.0], &[3]);
        assert_eq!(x.relu().to_vec(), vec![0.0, 3.0, 0.0]);
        assert_eq!(x.sigmoid().to_vec()[2], 0.5);
        assert_eq!(x.gelu().to_vec()[2], 0.0);
    }

    #[test]
    fn nan_propagates_through_relu_and_clamp() {
        let x = t(&[f64::NAN], &[1]);
        assert!(x.relu().item().is_nan());
        assert!(x.clamp(0.0, 1.0).item().is_nan());
    }

    #[test]
    fn broadcast_mul_reduces_gradient() {
        let a = Tensor::<f64>::param(vec![1.0, 2.0], &[1, 2, 1, 1]).unwrap();
        let b = Tensor::<f64>::param((0..8).map(|v| v as f64).collect(), &[1, 2, 2, 2]).unwrap();
        let y = a.mul(&b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert_eq!(y.to_vec()[5], 10.0);
        y.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![6.0, 22.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn incompatible_broadcast_names_shapes() {
        let err = t(&[1.0; 3], &[3]).add(&t(&[1.0; 2], &[2])).unwrap_err();
        assert!(err.to_string().contains("[3]"));
    }

    #[test]
    fn shared_input_accumulates_both_paths() {
        // y = x*x + 3x  =>  dy/dx = 2x + 3
        let x = Tensor::<f64>::param(vec![1.5, -2.0], &[2]).unwrap();
        let y = x.mul(&x).unwrap().add(&x.scale(3.0)).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, -1.0]);
    }
}
