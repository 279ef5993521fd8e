//! Single-channel images in row-major order.

use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn zeros(height: usize, width: usize) -> Self {
        Raster { height, width, data: vec![0.0; height * width] }
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid(format!(
                "raster of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Raster { height, width, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.width + c] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Zero-pads bottom and right edges up to the next multiple of `m`.
    /// Returns the padded raster and the `(rows, cols)` added.
    pub fn pad_to_multiple(&self, m: usize) -> (Raster, (usize, usize)) {
        let h = self.height.div_ceil(m) * m;
        let w = self.width.div_ceil(m) * m;
        if (h, w) == self.dims() {
            return (self.clone(), (0, 0));
        }
        let mut out = Raster::zeros(h, w);
        for r in 0..self.height {
            out.data[r * w..r * w + self.width].copy_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        (out, (h - self.height, w - self.width))
    }

    pub fn crop(&self, height: usize, width: usize) -> Raster {
        let mut out = Raster::zeros(height, width);
        for r in 0..height {
            out.data[r * width..(r + 1) * width].copy_from_slice(&self.data[r * self.width..r * self.width + width]);
        }
        out
    }

    /// Threshold at 0.5, ties positive.
    pub fn binarize(&self) -> Raster {
        let data = self.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
        Raster { height: self.height, width: self.width, data }
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        stack(std::slice::from_ref(self)).expect("single raster always stacks")
    }
}

/// Stacks equally sized rasters into an N×1×H×W tensor.
pub fn stack<T: Element>(rasters: &[Raster]) -> Result<Tensor<T>> {
    let first = rasters.first().ok_or_else(|| invalid("cannot stack zero rasters"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(rasters.len() * h * w);
    for r in rasters {
        if r.dims() != (h, w) {
            return Err(invalid(format!("cannot stack {}x{} with {h}x{w}", r.height, r.width)));
        }
        data.extend(r.data.iter().map(|&v| T::lit(v as f64)));
    }
    Ok(Tensor::new(data, &[rasters.len(), 1, h, w])?)
}

/// Splits channel `channel` of an N×C×H×W tensor into N rasters.
pub fn unstack<T: Element>(t: &Tensor<T>, channel: usize) -> Result<Vec<Raster>> {
    let (n, c, h, w) = t.dims4("unstack")?;
    if channel >= c {
        return Err(invalid(format!("channel {channel} out of range for {c} channels")));
    }
    let d = t.data();
    Ok((0..n)
        .map(|i| {
            let off = (i * c + channel) * h * w;
            let data = d[off..off + h * w].iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
            Raster { height: h, width: w, data }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_round_trips() {
        let r = Raster::new(3, 5, (0..15).map(|v| v as f32).collect()).unwrap();
        let (p, pad) = r.pad_to_multiple(8);
        assert_eq!(p.dims(), (8, 8));
        assert_eq!(pad, (5, 3));
        assert_eq!(p.get(2, 4), 14.0);
        assert_eq!(p.get(3, 0), 0.0);
        assert_eq!(p.crop(3, 5), r);
    }

    #[test]
    fn binarize_ties_positive() {
        let r = Raster::new(1, 3, vec![0.4999, 0.5, 0.9]).unwrap();
        assert_eq!(r.binarize().data, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn stack_unstack_round_trip() {
        let a = Raster::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let b = Raster::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let t = stack::<f32>(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(unstack(&t, 0).unwrap(), vec![a, b]);
        assert!(stack::<f32>(&[Raster::zeros(2, 2), Raster::zeros(2, 3)]).is_err());
    }
}
