//! Deterministic synthetic scenes: a road skeleton, its dilated mask and a
//! noisy trajectory image rasterized from simulated GNSS points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::rasterize::{rasterize_points, Bounds, RasterSpec};
use super::SamplePair;
use crate::error::Result;
use crate::raster::Raster;

/// Generator constants, fixed so that scenes are reproducible.
pub mod params {
    pub const SEGMENTS: (usize, usize) = (2, 5);
    pub const ROAD_WIDTH: (usize, usize) = (2, 4);
    pub const MIN_LENGTH: f64 = 0.5;
    pub const MAX_LENGTH: f64 = 1.6;
    pub const MAX_COVERAGE: f64 = 0.22;
    pub const MIN_COVERAGE: f64 = 0.025;
    pub const ATTEMPTS: usize = 80;
    pub const JITTER_SIGMA: f64 = 0.8;
    pub const TRAVERSALS: (usize, usize) = (3, 6);
    pub const SAMPLE_STEP: (f64, f64) = (0.8, 1.6);
    pub const DROPOUT_START: f64 = 0.03;
    pub const DROPOUT_RUN: (f64, f64) = (3.0, 12.0);
    pub const FIELDS: (usize, usize) = (1, 3);
    pub const FIELD_EXTENT: (f64, f64) = (0.2, 0.45);
    pub const PASS_SPACING: f64 = 3.0;
    pub const PASS_STEP: f64 = 1.5;
}
use params::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    /// Side length in pixels; a multiple of 8, at least 16.
    pub size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { size: 64 }
    }
}

impl SynthSpec {
    pub fn raster_spec(&self) -> RasterSpec {
        RasterSpec { bounds: synth_bounds(self.size), height: self.size, width: self.size }
    }
}

/// Roughly one metre per pixel around 34.5°N, 113.5°E.
pub fn synth_bounds(size: usize) -> Bounds {
    let span = 1e-5 * size as f64;
    Bounds { lon_min: 113.5, lat_min: 34.5, lon_max: 113.5 + span, lat_max: 34.5 + span }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Line,
    Bent,
    Curve,
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Continuous pixel-space polyline `(x, y)`.
    pub path: Vec<(f64, f64)>,
    /// 8-connected skeleton pixels `(row, col)`.
    pub skeleton: Vec<(usize, usize)>,
    pub width: usize,
}

pub struct Scene {
    pub pair: SamplePair,
    pub segments: Vec<Segment>,
    pub points: usize,
}

fn border_point(rng: &mut ChaCha8Rng, side: usize, n: f64) -> (f64, f64) {
    let t = rng.random_range(0.0..n);
    match side {
        0 => (t, 0.0),
        1 => (n - 1e-6, t),
        2 => (t, n - 1e-6),
        _ => (0.0, t),
    }
}

fn interior(rng: &mut ChaCha8Rng, n: f64) -> (f64, f64) {
    (rng.random_range(0.2 * n..0.8 * n), rng.random_range(0.2 * n..0.8 * n))
}

fn polyline_length(p: &[(f64, f64)]) -> f64 {
    p.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum()
}

/// Bresenham line between two pixels, both ends included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = vec![(x, y)];
    while (x, y) != b {
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        out.push((x, y));
    }
    out
}

fn skeletonize(path: &[(f64, f64)], n: usize) -> Vec<(usize, usize)> {
    let clamp = |v: f64| (v.floor() as i64).clamp(0, n as i64 - 1);
    let mut px: Vec<(usize, usize)> = Vec::new();
    for w in path.windows(2) {
        let a = (clamp(w[0].0), clamp(w[0].1));
        let b = (clamp(w[1].0), clamp(w[1].1));
        for (x, y) in bresenham(a, b) {
            let p = (y as usize, x as usize);
            if px.last() != Some(&p) {
                px.push(p);
            }
        }
    }
    px
}

fn make_segment(rng: &mut ChaCha8Rng, n: usize) -> Option<Segment> {
    let nf = n as f64;
    let s0 = rng.random_range(0..4);
    let s1 = (s0 + rng.random_range(1..4)) % 4;
    let a = border_point(rng, s0, nf);
    let b = border_point(rng, s1, nf);
    let kind = match rng.random_range(0..3) {
        0 => SegmentKind::Line,
        1 => SegmentKind::Bent,
        _ => SegmentKind::Curve,
    };
    let path = match kind {
        SegmentKind::Line => vec![a, b],
        SegmentKind::Bent => vec![a, interior(rng, nf), b],
        SegmentKind::Curve => {
            let c = interior(rng, nf);
            let steps = 4 * n;
            (0..=steps)
                .map(|i| {
                    let t = i as f64 / steps as f64;
                    let u = 1.0 - t;
                    (u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0, u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1)
                })
                .collect()
        }
    };
    let len = polyline_length(&path);
    if len < MIN_LENGTH * nf || len > MAX_LENGTH * nf {
        return None;
    }
    let skeleton = skeletonize(&path, n);
    let width = rng.random_range(ROAD_WIDTH.0..=ROAD_WIDTH.1);
    Some(Segment { kind, path, skeleton, width })
}

/// Square structuring element of side `width` anchored so the skeleton
/// pixel is always covered.
fn dilate_into(mask: &mut Raster, seg: &Segment) {
    let lo = (seg.width as i64 - 1) / 2;
    let hi = seg.width as i64 / 2;
    let n = mask.height as i64;
    for &(r, c) in &seg.skeleton {
        for dr in -lo..=hi {
            for dc in -lo..=hi {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if (0..n).contains(&rr) && (0..n).contains(&cc) {
                    mask.set(rr as usize, cc as usize, 1.0);
                }
            }
        }
    }
}

fn coverage(m: &Raster) -> f64 {
    m.count_on() as f64 / m.data.len() as f64
}

/// Points along a polyline at random spacing, with GPS jitter and runs of
/// dropped samples.
fn traverse(rng: &mut ChaCha8Rng, path: &[(f64, f64)], jitter: &Normal<f64>, out: &mut Vec<(f64, f64)>) {
    let mut gap = 0.0;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let mut s = 0.0;
        while s < len {
            let step = rng.random_range(SAMPLE_STEP.0..SAMPLE_STEP.1);
            s += step;
            if gap > 0.0 {
                gap -= step;
                continue;
            }
            if rng.random_bool(DROPOUT_START) {
                gap = rng.random_range(DROPOUT_RUN.0..DROPOUT_RUN.1);
                continue;
            }
            let t = (s / len).min(1.0);
            out.push((a.0 + t * (b.0 - a.0) + jitter.sample(rng), a.1 + t * (b.1 - a.1) + jitter.sample(rng)));
        }
    }
}

/// Back-and-forth coverage passes over a rectangle, keeping only points
/// that fall off the road.
fn field_passes(rng: &mut ChaCha8Rng, n: usize, mask: &Raster, jitter: &Normal<f64>, out: &mut Vec<(f64, f64)>) {
    let nf = n as f64;
    let fw = rng.random_range(FIELD_EXTENT.0..FIELD_EXTENT.1) * nf;
    let fh = rng.random_range(FIELD_EXTENT.0..FIELD_EXTENT.1) * nf;
    let x0 = rng.random_range(0.0..nf - fw);
    let y0 = rng.random_range(0.0..nf - fh);
    let rows = (fh / PASS_SPACING).floor() as usize + 1;
    for i in 0..rows {
        let y = y0 + i as f64 * PASS_SPACING;
        let along = (fw / PASS_STEP).floor() as usize + 1;
        for j in 0..along {
            let k = if i % 2 == 0 { j } else { along - 1 - j };
            let p = (x0 + k as f64 * PASS_STEP + jitter.sample(rng), y + jitter.sample(rng));
            let (c, r) = (p.0.floor(), p.1.floor());
            let on_road = c >= 0.0 && r >= 0.0 && c < nf && r < nf && mask.get(r as usize, c as usize) != 0.0;
            if !on_road {
                out.push(p);
            }
        }
    }
}

pub fn synth_scene_detailed(seed: u64, spec: &SynthSpec) -> Result<Scene> {
    let n = spec.size;
    let raster_spec = spec.raster_spec();
    raster_spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.random_range(SEGMENTS.0..=SEGMENTS.1);
    let mut mask = Raster::zeros(n, n);
    let mut segments: Vec<Segment> = Vec::new();
    for _ in 0..ATTEMPTS {
        let enough = segments.len() >= target && coverage(&mask) >= MIN_COVERAGE;
        if enough || segments.len() == SEGMENTS.1 {
            break;
        }
        let Some(seg) = make_segment(&mut rng, n) else { continue };
        let mut trial = mask.clone();
        dilate_into(&mut trial, &seg);
        if coverage(&trial) > MAX_COVERAGE {
            continue;
        }
        mask = trial;
        segments.push(seg);
    }

    let jitter = Normal::new(0.0, JITTER_SIGMA).expect("positive sigma");
    let mut pts = Vec::new();
    for seg in &segments {
        for _ in 0..rng.random_range(TRAVERSALS.0..=TRAVERSALS.1) {
            traverse(&mut rng, &seg.path, &jitter, &mut pts);
        }
    }
    for _ in 0..rng.random_range(FIELDS.0..=FIELDS.1) {
        field_passes(&mut rng, n, &mask, &jitter, &mut pts);
    }
    let b = raster_spec.bounds;
    let nf = n as f64;
    let coords = pts.iter().map(|&(x, y)| {
        (b.lon_min + x / nf * (b.lon_max - b.lon_min), b.lat_max - y / nf * (b.lat_max - b.lat_min))
    });
    let (image, _) = rasterize_points(coords, &raster_spec)?;
    Ok(Scene { pair: SamplePair { id: format!("synth_{seed}"), image, mask }, segments, points: pts.len() })
}

pub fn synth_scene(seed: u64, spec: &SynthSpec) -> Result<SamplePair> {
    Ok(synth_scene_detailed(seed, spec)?.pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_pair() {
        let s = SynthSpec::default();
        let a = synth_scene(42, &s).unwrap();
        let b = synth_scene(42, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_scene(43, &s).unwrap());
    }

    #[test]
    fn bresenham_is_eight_connected() {
        let l = bresenham((0, 0), (7, 3));
        assert_eq!(l.first(), Some(&(0, 0)));
        assert_eq!(l.last(), Some(&(7, 3)));
        assert!(l.windows(2).all(|w| (w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1));
    }

    #[test]
    fn scene_structure() {
        let sc = synth_scene_detailed(7, &SynthSpec::default()).unwrap();
        assert!((2..=5).contains(&sc.segments.len()));
        assert!(sc.pair.mask.is_binary());
        assert!(sc.pair.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(sc.pair.image.data.iter().copied().fold(0.0, f32::max), 1.0);
        for seg in &sc.segments {
            assert!((2..=4).contains(&seg.width));
        }
    }

    #[test]
    fn demo_size_works() {
        let p = synth_scene(1, &SynthSpec { size: 256 }).unwrap();
        assert_eq!(p.image.dims(), (256, 256));
        assert!(synth_scene(1, &SynthSpec { size: 20 }).is_err());
    }
}
