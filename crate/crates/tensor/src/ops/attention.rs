use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::ops::matmul::matmul;
use crate::ops::softmax::softmax;
use crate::tensor::Tensor;

/// `[N, S, D] → [N·heads, S, D/heads]`
fn split_heads<T: Element>(x: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (n, s, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.reshape(&[n, s, heads, d / heads])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[n * heads, s, d / heads])
}

fn merge_heads<T: Element>(x: &Tensor<T>, n: usize, heads: usize) -> Result<Tensor<T>> {
    let (s, dh) = (x.shape()[1], x.shape()[2]);
    x.reshape(&[n, heads, s, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[n, s, heads * dh])
}

/// Multi-head scaled dot-product attention on already projected
/// `[N, S, D]` queries, keys and values: per head
/// `softmax(q·kᵀ/√d_head)·v`, heads re-merged to `[N, S, D]`.
pub fn scaled_dot_attention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let sq = q.shape().to_vec();
    if sq.len() != 3 {
        return Err(shape_err("attention", format!("expected [N, S, D] queries, got {sq:?}")));
    }
    if k.shape() != sq.as_slice() || v.shape() != sq.as_slice() {
        return Err(shape_err(
            "attention",
            format!("q {sq:?}, k {:?} and v {:?} must share a shape", k.shape(), v.shape()),
        ));
    }
    let (n, _, d) = (sq[0], sq[1], sq[2]);
    if heads == 0 || d % heads != 0 {
        return Err(shape_err("attention", format!("embed dim {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let qh = split_heads(q, heads)?;
    let kh = split_heads(k, heads)?;
    let vh = split_heads(v, heads)?;
    let scores = matmul(&qh, &kh.permute(&[0, 2, 1])?)?.scale(1.0 / (dh as f64).sqrt());
    let attn = softmax(&scores, 2)?;
    merge_heads(&matmul(&attn, &vh)?, n, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = Tensor::<f64>::rand_uniform(&[1, 1, 8], -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::rand_uniform(&[1, 1, 8], -1.0, 1.0, &mut rng);
        let v = Tensor::<f64>::rand_uniform(&[1, 1, 8], -1.0, 1.0, &mut rng);
        let y = scaled_dot_attention(&q, &k, &v, 2).unwrap();
        assert_eq!(y.to_vec(), v.to_vec());
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Tensor::<f64>::rand_uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
        let krow = Tensor::<f64>::rand_uniform(&[1, 1, 4], -1.0, 1.0, &mut rng).to_vec();
        let k = Tensor::new(krow.repeat(3), &[1, 3, 4]).unwrap();
        let v = Tensor::<f64>::rand_uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
        let y = scaled_dot_attention(&q, &k, &v, 2).unwrap().to_vec();
        let vd = v.to_vec();
        for s in 0..3 {
            for j in 0..4 {
                let mean = (vd[j] + vd[4 + j] + vd[8 + j]) / 3.0;
                assert!((y[s * 4 + j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let x = Tensor::<f64>::zeros(&[1, 2, 6]);
        assert!(scaled_dot_attention(&x, &x, &x, 4).is_err());
    }
}
