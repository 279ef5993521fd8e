use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Interpolation taps along one axis: `(i0, i1, t)` with value
/// `v[i0] + t·(v[i1] − v[i0])`.
fn taps<T: Element>(input: usize, scale: usize) -> Vec<(usize, usize, T)> {
    (0..input * scale)
        .map(|dst| {
            // half-pixel centers, clamped to the valid range
            let src = ((dst as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::lit(src - i0 as f64))
        })
        .collect()
}

/// Bilinear upsampling by an integer factor in {2, 4, 8}.
pub fn bilinear_upsample<T: Element>(x: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("bilinear_upsample")?;
    if ![2, 4, 8].contains(&scale) {
        return Err(invalid("bilinear_upsample", format!("scale {scale} not in {{2, 4, 8}}")));
    }
    let (oh, ow) = (h * scale, w * scale);
    let ty: Vec<(usize, usize, T)> = taps(h, scale);
    let tx: Vec<(usize, usize, T)> = taps(w, scale);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    {
        let d = x.data();
        for plane in d.chunks_exact(h * w) {
            for &(y0, y1, fy) in &ty {
                let r0 = &plane[y0 * w..(y0 + 1) * w];
                let r1 = &plane[y1 * w..(y1 + 1) * w];
                for &(x0, x1, fx) in &tx {
                    let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    out.push(top + fy * (bot - top));
                }
            }
        }
    }
    Ok(Tensor::from_op("bilinear_upsample", out, vec![n, c, oh, ow], vec![x.clone()], move |g, _| {
        let mut gx = vec![T::zero(); n * c * h * w];
        for (p, gp) in g.chunks_exact(oh * ow).enumerate() {
            let plane = &mut gx[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let gv = gp[oy * ow + ox];
                    let gt = gv * (T::one() - fy);
                    let gb = gv * fy;
                    plane[y0 * w + x0] += gt * (T::one() - fx);
                    plane[y0 * w + x1] += gt * fx;
                    plane[y1 * w + x0] += gb * (T::one() - fx);
                    plane[y1 * w + x1] += gb * fx;
                }
            }
        }
        vec![Some(gx)]
    }))
}
