//! Hit-count rasterization of trajectory points onto an equirectangular
//! grid with log-compressed intensities.

use serde::{Deserialize, Serialize};

use super::log::TrajectoryLog;
use crate::error::{invalid, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub bounds: Bounds,
    pub height: usize,
    pub width: usize,
}

impl RasterSpec {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        let finite = [b.lon_min, b.lat_min, b.lon_max, b.lat_max].iter().all(|v| v.is_finite());
        if !finite || b.lon_max <= b.lon_min || b.lat_max <= b.lat_min {
            return Err(invalid(format!("degenerate bounds {b:?}")));
        }
        for (what, v) in [("height", self.height), ("width", self.width)] {
            if v < 16 || v % 8 != 0 {
                return Err(invalid(format!("grid {what} {v} must be a multiple of 8 and at least 16")));
            }
        }
        Ok(())
    }

    /// Grid cell of a point, `None` when it lies outside the bounds.
    pub fn cell(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        let b = &self.bounds;
        if !(b.lon_min..=b.lon_max).contains(&lon) || !(b.lat_min..=b.lat_max).contains(&lat) {
            return None;
        }
        let c = ((lon - b.lon_min) / (b.lon_max - b.lon_min) * self.width as f64).floor() as usize;
        let r = ((b.lat_max - lat) / (b.lat_max - b.lat_min) * self.height as f64).floor() as usize;
        Some((r.min(self.height - 1), c.min(self.width - 1)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterReport {
    pub points: usize,
    /// Points outside the bounds, left out of the image.
    pub clamped: usize,
}

/// Per-pixel `ln(1+n)/ln(1+n_max)` of the hit counts `n`.
pub fn rasterize_points(points: impl IntoIterator<Item = (f64, f64)>, spec: &RasterSpec) -> Result<(Raster, RasterReport)> {
    spec.validate()?;
    let mut counts = vec![0u32; spec.height * spec.width];
    let mut report = RasterReport::default();
    for (lon, lat) in points {
        report.points += 1;
        match spec.cell(lon, lat) {
            Some((r, c)) => counts[r * spec.width + c] += 1,
            None => report.clamped += 1,
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut img = Raster::zeros(spec.height, spec.width);
    if max > 0 {
        let denom = (max as f64).ln_1p();
        for (v, &n) in img.data.iter_mut().zip(&counts) {
            *v = if n == max { 1.0 } else { ((n as f64).ln_1p() / denom) as f32 };
        }
    }
    Ok((img, report))
}

pub fn rasterize(log: &TrajectoryLog, spec: &RasterSpec) -> Result<(Raster, RasterReport)> {
    if log.points.is_empty() {
        return Err(invalid("empty trajectory"));
    }
    rasterize_points(log.coords(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::log::TrajectoryPoint;

    fn spec() -> RasterSpec {
        RasterSpec { bounds: Bounds { lon_min: 113.0, lat_min: 34.0, lon_max: 113.5, lat_max: 34.5 }, height: 16, width: 16 }
    }

    #[test]
    fn center_point_lands_on_8_8() {
        let (img, rep) = rasterize_points([(113.25, 34.25)], &spec()).unwrap();
        assert_eq!(img.get(8, 8), 1.0);
        assert_eq!(img.count_on(), 1);
        assert_eq!(rep, RasterReport { points: 1, clamped: 0 });
    }

    #[test]
    fn log_compressed_counts() {
        let (img, _) = rasterize_points([(113.005, 34.495), (113.33, 34.01), (113.33, 34.01)], &spec()).unwrap();
        assert!((img.get(0, 0) as f64 - 2f64.ln() / 3f64.ln()).abs() < 1e-7);
        assert_eq!(img.get(15, 10), 1.0);
        assert!((img.get(0, 0) - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn outside_points_are_counted_not_drawn() {
        let (img, rep) = rasterize_points([(112.0, 34.05), (113.05, 35.0)], &spec()).unwrap();
        assert_eq!(img.count_on(), 0);
        assert_eq!(rep.clamped, 2);
    }

    #[test]
    fn max_edge_maps_to_last_cell() {
        let (img, _) = rasterize_points([(113.5, 34.0)], &spec()).unwrap();
        assert_eq!(img.get(15, 15), 1.0);
    }

    #[test]
    fn order_does_not_matter() {
        let pts = [(113.01, 34.02), (113.37, 34.11), (113.01, 34.02), (113.45, 34.45)];
        let mut rev = pts;
        rev.reverse();
        assert_eq!(rasterize_points(pts, &spec()).unwrap(), rasterize_points(rev, &spec()).unwrap());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(rasterize(&TrajectoryLog::default(), &spec()).unwrap_err().to_string().contains("empty trajectory"));
        let mut s = spec();
        s.height = 20;
        assert!(rasterize_points([], &s).is_err());
        let mut s = spec();
        s.bounds.lon_max = s.bounds.lon_min;
        assert!(rasterize_points([], &s).is_err());
        let log = TrajectoryLog {
            points: vec![TrajectoryPoint { timestamp: 0.0, lon: 113.25, lat: 34.25, speed: 0.0, heading: 0.0, machine_id: "m".into() }],
        };
        assert_eq!(rasterize(&log, &spec()).unwrap().0.get(8, 8), 1.0);
    }
}
