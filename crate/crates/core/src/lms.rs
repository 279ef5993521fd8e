//! Laplacian pyramid separation of an image into band-pass detail levels
//! and a coarse base.

use lfinet_tensor::ops::{avg_pool2x2, bilinear_upsample};
use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};

/// 3×3 binomial blur weights, `[1,2,1]ᵀ[1,2,1] / 16`.
pub const GAUSSIAN_KERNEL: [[f64; 3]; 3] = [
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
    [2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0],
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
];

pub const LEVELS: usize = 3;
pub const SIZE_MULTIPLE: usize = 1 << LEVELS;

#[derive(Clone, Debug)]
pub struct FrequencyDecomposition<T: Element> {
    /// L0 at full resolution, L1 at half, L2 at quarter.
    pub levels: [Tensor<T>; LEVELS],
    /// Coarsest pyramid level, at one eighth resolution.
    pub base: Tensor<T>,
}

pub fn check_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(SIZE_MULTIPLE) || !w.is_multiple_of(SIZE_MULTIPLE) {
        return Err(invalid(format!(
            "image is {h}x{w}; height and width must be positive multiples of {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// `[1,2,1]/4` along rows (`axis = 2`) or columns (`axis = 3`) with reflect
/// padding. Evaluated as `½(c + ½(l + r))` so constants map to themselves
/// exactly.
fn binomial_pass<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("gaussian_blur")?;
    if h < 2 || w < 2 {
        return Err(invalid(format!("gaussian_blur needs at least 2x2, got {h}x{w}")));
    }
    // (outer count, taps along axis, stride between taps)
    let (len, stride) = if axis == 2 { (h, w) } else { (w, 1) };
    let lines: Vec<(usize, usize)> = if axis == 2 {
        (0..n * c).flat_map(|p| (0..w).map(move |col| (p * h * w + col, stride))).collect()
    } else {
        (0..n * c * h).map(|row| (row * w, stride)).collect()
    };
    let half = T::lit(0.5);
    let mut out = vec![T::zero(); x.numel()];
    {
        let d = x.data();
        for &(base, s) in &lines {
            for i in 0..len {
                let l = reflect(i as isize - 1, len);
                let r = reflect(i as isize + 1, len);
                out[base + i * s] = half * (d[base + i * s] + half * (d[base + l * s] + d[base + r * s]));
            }
        }
    }
    let quarter = T::lit(0.25);
    Ok(Tensor::from_op("gaussian_blur", out, x.shape().to_vec(), vec![x.clone()], move |g, _| {
        let mut gx = vec![T::zero(); g.len()];
        for &(base, s) in &lines {
            for i in 0..len {
                let l = reflect(i as isize - 1, len);
                let r = reflect(i as isize + 1, len);
                let gi = g[base + i * s];
                gx[base + i * s] += half * gi;
                gx[base + l * s] += quarter * gi;
                gx[base + r * s] += quarter * gi;
            }
        }
        vec![Some(gx)]
    }))
}

/// Separable application of [`GAUSSIAN_KERNEL`] with reflect padding.
pub fn gaussian_blur<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    binomial_pass(&binomial_pass(x, 2)?, 3)
}

/// `[I0, I1, I2, I3]` with `I_{l+1} = pool(blur(I_l))`.
pub fn gaussian_pyramid<T: Element>(image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let (_, _, h, w) = image.dims4("gaussian_pyramid")?;
    check_size(h, w)?;
    let mut levels = vec![image.clone()];
    for l in 0..LEVELS {
        let next = avg_pool2x2(&gaussian_blur(&levels[l])?)?;
        levels.push(next);
    }
    Ok(levels)
}

pub fn laplacian_decompose<T: Element>(image: &Tensor<T>) -> Result<FrequencyDecomposition<T>> {
    let p = gaussian_pyramid(image)?;
    let band = |l: usize| -> Result<Tensor<T>> { Ok(p[l].sub(&bilinear_upsample(&p[l + 1], 2)?)?) };
    Ok(FrequencyDecomposition { levels: [band(0)?, band(1)?, band(2)?], base: p[LEVELS].clone() })
}

/// `L0 + Up(L1 + Up(L2 + Up(base)))`
pub fn laplacian_reconstruct<T: Element>(d: &FrequencyDecomposition<T>) -> Result<Tensor<T>> {
    let mut acc = d.base.clone();
    for l in (0..LEVELS).rev() {
        let up = bilinear_upsample(&acc, 2)?;
        if up.shape() != d.levels[l].shape() {
            return Err(invalid(format!(
                "level {l} has shape {:?} but the coarser level upsamples to {:?}",
                d.levels[l].shape(),
                up.shape()
            )));
        }
        acc = d.levels[l].add(&up)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lfinet_tensor::no_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dyadic(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(0..256) as f64 / 256.0).collect(), shape).unwrap()
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let s: f64 = GAUSSIAN_KERNEL.iter().flatten().sum();
        assert_eq!(s, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(GAUSSIAN_KERNEL[i][j], GAUSSIAN_KERNEL[2 - i][j]);
                assert_eq!(GAUSSIAN_KERNEL[i][j], GAUSSIAN_KERNEL[i][2 - j]);
            }
        }
    }

    #[test]
    fn blur_matches_direct_2d_kernel() {
        // dyadic inputs keep both evaluation orders exact
        let x = dyadic(&[1, 1, 6, 5], 3);
        let y = gaussian_blur(&x).unwrap().to_vec();
        let d = x.to_vec();
        for r in 0..6 {
            for c in 0..5 {
                let mut acc = 0.0;
                for (dr, row) in GAUSSIAN_KERNEL.iter().enumerate() {
                    for (dc, k) in row.iter().enumerate() {
                        let rr = reflect(r as isize + dr as isize - 1, 6);
                        let cc = reflect(c as isize + dc as isize - 1, 5);
                        acc += k * d[rr * 5 + cc];
                    }
                }
                assert_eq!(y[r * 5 + c], acc, "({r},{c})");
            }
        }
    }

    #[test]
    fn pyramid_shape_ladder() {
        let p = gaussian_pyramid(&dyadic(&[1, 1, 8, 8], 1)).unwrap();
        let sizes: Vec<_> = p.iter().map(|t| t.shape()[2]).collect();
        assert_eq!(sizes, vec![8, 4, 2, 1]);
    }

    #[test]
    fn level_one_matches_blur_then_pool_oracle() {
        let x = dyadic(&[1, 1, 16, 16], 5);
        let p = gaussian_pyramid(&x).unwrap();
        let d = x.to_vec();
        let blur = |r: usize, c: usize| -> f64 {
            let mut acc = 0.0;
            for (dr, row) in GAUSSIAN_KERNEL.iter().enumerate() {
                for (dc, k) in row.iter().enumerate() {
                    let rr = reflect(r as isize + dr as isize - 1, 16);
                    let cc = reflect(c as isize + dc as isize - 1, 16);
                    acc += k * d[rr * 16 + cc];
                }
            }
            acc
        };
        let l1 = p[1].to_vec();
        for r in 0..8 {
            for c in 0..8 {
                let want = (blur(2 * r, 2 * c) + blur(2 * r, 2 * c + 1) + blur(2 * r + 1, 2 * c) + blur(2 * r + 1, 2 * c + 1)) / 4.0;
                assert_eq!(l1[r * 8 + c], want);
            }
        }
    }

    #[test]
    fn constant_image_annihilates_detail() {
        for c in [0.3f32, 0.7, 1.0, 0.123_456_7] {
            let x = Tensor::<f32>::full(&[2, 1, 24, 16], c);
            let p = gaussian_pyramid(&x).unwrap();
            assert!(p.iter().all(|t| t.to_vec().iter().all(|&v| v == c)));
            let d = laplacian_decompose(&x).unwrap();
            for l in &d.levels {
                assert!(l.to_vec().iter().all(|&v| v == 0.0));
            }
            assert!(d.base.to_vec().iter().all(|&v| v == c));
        }
    }

    #[test]
    fn reconstruction_is_exact_up_to_roundoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::rand_uniform(&[3, 1, 32, 40], 0.0, 1.0, &mut rng);
        let r = laplacian_reconstruct(&laplacian_decompose(&x).unwrap()).unwrap();
        let err = x.to_vec().iter().zip(r.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-5, "{err}");

        let x = Tensor::<f64>::rand_uniform(&[3, 1, 32, 40], 0.0, 1.0, &mut rng);
        let r = laplacian_reconstruct(&laplacian_decompose(&x).unwrap()).unwrap();
        let err = x.to_vec().iter().zip(r.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn zero_levels_reconstruct_to_repeated_doubling() {
        let b = dyadic(&[1, 1, 2, 3], 8);
        let z = |s: usize| Tensor::<f64>::zeros(&[1, 1, 2 * s, 3 * s]);
        let d = FrequencyDecomposition { levels: [z(8), z(4), z(2)], base: b.clone() };
        let r = laplacian_reconstruct(&d).unwrap();
        let mut want = b.clone();
        for _ in 0..3 {
            want = bilinear_upsample(&want, 2).unwrap();
        }
        assert_eq!(r.to_vec(), want.to_vec());

        // identical to one ×8 step for a constant base
        let c = Tensor::<f64>::full(&[1, 1, 2, 3], 0.4);
        let d = FrequencyDecomposition { levels: [z(8), z(4), z(2)], base: c.clone() };
        assert_eq!(laplacian_reconstruct(&d).unwrap().to_vec(), bilinear_upsample(&c, 8).unwrap().to_vec());
    }

    #[test]
    fn detail_energy_drops_after_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::rand_uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut rng);
        let energy = |t: &Tensor<f64>| t.to_vec().iter().map(|v| v * v).sum::<f64>();
        let raw = energy(&laplacian_decompose(&x).unwrap().levels[0]);
        let smooth = energy(&laplacian_decompose(&gaussian_blur(&x).unwrap()).unwrap().levels[0]);
        assert!(raw >= smooth, "{raw} < {smooth}");
    }

    #[test]
    fn decomposition_is_linear() {
        let a = dyadic(&[1, 1, 16, 8], 20);
        let b = dyadic(&[1, 1, 16, 8], 21);
        let mix = a.scale(0.5).add(&b.scale(-2.0)).unwrap();
        let (da, db, dm) = no_grad(|| {
            (laplacian_decompose(&a).unwrap(), laplacian_decompose(&b).unwrap(), laplacian_decompose(&mix).unwrap())
        });
        for l in 0..LEVELS {
            let want: Vec<f64> = da.levels[l].to_vec().iter().zip(db.levels[l].to_vec()).map(|(x, y)| 0.5 * x - 2.0 * y).collect();
            for (g, w) in dm.levels[l].to_vec().iter().zip(want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_sizes_name_the_multiple() {
        let err = laplacian_decompose(&Tensor::<f32>::zeros(&[1, 1, 12, 16])).unwrap_err();
        assert!(err.to_string().contains("multiples of 8"), "{err}");
        let d = FrequencyDecomposition {
            levels: [Tensor::<f32>::zeros(&[1, 1, 8, 8]), Tensor::zeros(&[1, 1, 4, 4]), Tensor::zeros(&[1, 1, 4, 4])],
            base: Tensor::zeros(&[1, 1, 1, 1]),
        };
        assert!(laplacian_reconstruct(&d).unwrap_err().to_string().contains("level 2"));
    }
}
