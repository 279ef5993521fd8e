use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// 2×2 average pooling with stride 2. H and W must be even.
pub fn avg_pool2x2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("avg_pool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err("avg_pool2x2", format!("height {h} and width {w} must both be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    {
        let d = x.data();
        for plane in d.chunks_exact(h * w) {
            for oy in 0..oh {
                let r0 = &plane[2 * oy * w..(2 * oy + 1) * w];
                let r1 = &plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
                for ox in 0..ow {
                    // pairwise order keeps constant blocks exact
                    let s = (r0[2 * ox] + r0[2 * ox + 1]) + (r1[2 * ox] + r1[2 * ox + 1]);
                    out.push(s * quarter);
                }
            }
        }
    }
    Ok(Tensor::from_op("avg_pool2x2", out, vec![n, c, oh, ow], vec![x.clone()], move |g, _| {
        let mut gx = vec![T::zero(); n * c * h * w];
        for (p, gplane) in g.chunks_exact(oh * ow).enumerate() {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = gplane[oy * ow + ox] * quarter;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        gx[base + (2 * oy + dy) * w + 2 * ox + dx] = v;
                    }
                }
            }
        }
        vec![Some(gx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_mean() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        assert_eq!(avg_pool2x2(&x).unwrap().to_vec(), vec![2.5]);
    }

    #[test]
    fn constants_survive_exactly() {
        let x = Tensor::<f32>::full(&[1, 2, 4, 6], 0.3);
        let y = avg_pool2x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 3]);
        assert!(y.to_vec().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn odd_extent_rejected() {
        assert!(avg_pool2x2(&Tensor::<f64>::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn adjoint_spreads_quarter() {
        let x = Tensor::<f64>::param(vec![0.0; 16], &[1, 1, 4, 4]).unwrap();
        let y = avg_pool2x2(&x).unwrap();
        y.backward_with(vec![4.0, 8.0, 12.0, 16.0]).unwrap();
        let g = x.grad().unwrap();
        assert_eq!(&g[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(&g[12..], &[3.0, 3.0, 4.0, 4.0]);
    }
}
