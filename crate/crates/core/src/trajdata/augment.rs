//! Rotations and flips applied identically to image and mask.

use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::error::{invalid, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [AugmentOp::Rot90, AugmentOp::Rot180, AugmentOp::Rot270, AugmentOp::FlipH, AugmentOp::FlipV];

    fn is_rotation(self) -> bool {
        matches!(self, AugmentOp::Rot90 | AugmentOp::Rot180 | AugmentOp::Rot270)
    }
}

/// Counterclockwise quarter turn: `(r, c) → (n−1−c, r)`.
fn rot90(x: &Raster) -> Raster {
    let n = x.height;
    let mut out = Raster::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            out.set(n - 1 - c, r, x.get(r, c));
        }
    }
    out
}

pub fn augment_raster(x: &Raster, op: AugmentOp) -> Result<Raster> {
    if op.is_rotation() && x.height != x.width {
        return Err(invalid(format!("rotation needs a square image, got {}x{}", x.height, x.width)));
    }
    let (h, w) = x.dims();
    Ok(match op {
        AugmentOp::Rot90 => rot90(x),
        AugmentOp::Rot180 => rot90(&rot90(x)),
        AugmentOp::Rot270 => rot90(&rot90(&rot90(x))),
        AugmentOp::FlipH => {
            let mut out = x.clone();
            for r in 0..h {
                out.data[r * w..(r + 1) * w].reverse();
            }
            out
        }
        AugmentOp::FlipV => {
            let mut out = Raster::zeros(h, w);
            for r in 0..h {
                out.data[r * w..(r + 1) * w].copy_from_slice(&x.data[(h - 1 - r) * w..(h - r) * w]);
            }
            out
        }
    })
}

pub fn augment(pair: &SamplePair, op: AugmentOp) -> Result<SamplePair> {
    Ok(SamplePair { id: pair.id.clone(), image: augment_raster(&pair.image, op)?, mask: augment_raster(&pair.mask, op)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Raster {
        Raster::new(h, w, (0..h * w).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn rot90_moves_origin_to_bottom_left() {
        let mut x = Raster::zeros(4, 4);
        x.set(0, 0, 1.0);
        let y = augment_raster(&x, AugmentOp::Rot90).unwrap();
        assert_eq!(y.get(3, 0), 1.0);
        assert_eq!(y.count_on(), 1);
    }

    #[test]
    fn involutions_and_cycles() {
        let x = ramp(5, 5);
        let mut y = x.clone();
        for _ in 0..4 {
            y = augment_raster(&y, AugmentOp::Rot90).unwrap();
        }
        assert_eq!(y, x);
        let f = augment_raster(&augment_raster(&x, AugmentOp::FlipH).unwrap(), AugmentOp::FlipH).unwrap();
        assert_eq!(f, x);
        let r = ramp(3, 4);
        assert_eq!(augment_raster(&augment_raster(&r, AugmentOp::FlipV).unwrap(), AugmentOp::FlipV).unwrap(), r);
        let a = augment_raster(&x, AugmentOp::Rot270).unwrap();
        assert_eq!(augment_raster(&a, AugmentOp::Rot90).unwrap(), x);
    }

    #[test]
    fn pair_stays_aligned_and_binary() {
        let mut mask = Raster::zeros(4, 4);
        mask.set(1, 2, 1.0);
        mask.set(3, 0, 1.0);
        let image = ramp(4, 4);
        let p = SamplePair { id: "p".into(), image, mask };
        for op in AugmentOp::ALL {
            let q = augment(&p, op).unwrap();
            assert!(q.mask.is_binary());
            assert_eq!(q.mask.count_on(), 2);
            for i in 0..16 {
                if q.mask.data[i] == 1.0 {
                    assert!(q.image.data[i] == 6.0 || q.image.data[i] == 12.0, "{op:?}");
                }
            }
        }
    }

    #[test]
    fn non_square_rotation_rejected() {
        assert!(augment_raster(&ramp(2, 3), AugmentOp::Rot90).unwrap_err().to_string().contains("square"));
        assert!(augment_raster(&ramp(2, 3), AugmentOp::FlipH).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn every_op_is_invertible(n in 1usize..9, seed in 0u64..1000) {
            let x = Raster::new(n, n, (0..n * n).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f32).collect()).unwrap();
            let inverse = |op| match op {
                AugmentOp::Rot90 => AugmentOp::Rot270,
                AugmentOp::Rot270 => AugmentOp::Rot90,
                other => other,
            };
            for op in AugmentOp::ALL {
                let y = augment_raster(&x, op).unwrap();
                proptest::prop_assert_eq!(y.count_on(), x.count_on());
                proptest::prop_assert_eq!(augment_raster(&y, inverse(op)).unwrap(), x.clone());
            }
        }
    }
}
