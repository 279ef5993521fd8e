use crate::element::{gemm, Element};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Matrix product over the last two axes.
///
/// `a` is `[..., M, K]`. `b` is either a shared `[K, N]` matrix or carries
/// the same leading batch axes as `a`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let sa = a.shape().to_vec();
    let sb = b.shape().to_vec();
    if sa.len() < 2 || sb.len() < 2 {
        return Err(shape_err("matmul", format!("operands must be at least 2-D, got {sa:?} and {sb:?}")));
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != kb {
        return Err(shape_err("matmul", format!("inner dimensions differ: {sa:?} · {sb:?} ({k} vs {kb})")));
    }
    let batch: usize = sa[..sa.len() - 2].iter().product();
    let shared = sb.len() == 2;
    if !shared && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
        return Err(shape_err("matmul", format!("batch axes differ: {sa:?} · {sb:?}")));
    }
    let mut out_shape = sa[..sa.len() - 2].to_vec();
    out_shape.extend([m, n]);
    let mut out = vec![T::zero(); batch * m * n];
    {
        let (ad, bd) = (a.data(), b.data());
        if shared {
            gemm(batch * m, k, n, &ad, false, &bd, false, T::zero(), &mut out);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..(i + 1) * m * k],
                    false,
                    &bd[i * k * n..(i + 1) * k * n],
                    false,
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
    }
    Ok(Tensor::from_op("matmul", out, out_shape, vec![a.clone(), b.clone()], move |g, inputs| {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (ad, bd) = (a.data(), b.data());
        let ga = a.requires_grad().then(|| {
            let mut ga = vec![T::zero(); batch * m * k];
            if shared {
                gemm(batch * m, n, k, g, false, &bd, true, T::zero(), &mut ga);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &bd[i * k * n..(i + 1) * k * n],
                        true,
                        T::zero(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                    );
                }
            }
            ga
        });
        let gb = b.requires_grad().then(|| {
            if shared {
                let mut gb = vec![T::zero(); k * n];
                gemm(k, batch * m, n, &ad, true, g, false, T::zero(), &mut gb);
                gb
            } else {
                let mut gb = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        &ad[i * m * k..(i + 1) * m * k],
                        true,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        T::zero(),
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                }
                gb
            }
        });
        vec![ga, gb]
    }))
}

/// Affine map over the last axis: `x · w + b` with `w` stored `[in, out]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let y = matmul(x, w)?;
    match b {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}
