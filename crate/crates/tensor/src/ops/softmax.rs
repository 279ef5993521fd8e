use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Softmax along `axis`, stabilized by max subtraction.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut y = vec![T::zero(); x.numel()];
    {
        let d = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mx = (0..len).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for k in 0..len {
                    let e = (d[at(k)] - mx).exp();
                    y[at(k)] = e;
                    s += e;
                }
                for k in 0..len {
                    y[at(k)] = y[at(k)] / s;
                }
            }
        }
    }
    let saved = y.clone();
    Ok(Tensor::from_op("softmax", y, shape, vec![x.clone()], move |g, _| {
        let mut gx = vec![T::zero(); g.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot: T = (0..len).map(|k| g[at(k)] * saved[at(k)]).sum();
                for k in 0..len {
                    gx[at(k)] = saved[at(k)] * (g[at(k)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }))
}
