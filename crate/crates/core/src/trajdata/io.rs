//! 8-bit grayscale PNG files and JSON dataset manifests.

use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::error::{file_err, io_err, Result};
use crate::raster::Raster;

/// `floor(255·v + 0.5)` after clamping to `[0, 1]`.
pub fn to_byte(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) as f64 + 0.5).floor() as u8
}

pub fn save_png(path: &Path, r: &Raster) -> Result<()> {
    let bytes: Vec<u8> = r.data.iter().map(|&v| to_byte(v)).collect();
    let img = GrayImage::from_raw(r.width as u32, r.height as u32, bytes).expect("buffer matches raster size");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| file_err(path, e.to_string()))
}

/// Loads an 8-bit grayscale PNG as values `byte / 255`.
pub fn load_png(path: &Path) -> Result<Raster> {
    if !path.exists() {
        return Err(file_err(path, "file not found"));
    }
    let img = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| file_err(path, e.to_string()))?;
    if img.color() != ColorType::L8 {
        return Err(file_err(path, format!("expected 8-bit grayscale, found {:?}", img.color())));
    }
    let g = img.into_luma8();
    let (w, h) = g.dimensions();
    let data = g.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Raster::new(h as usize, w as usize, data)
}

/// Loads a mask PNG whose pixels are exactly 0 or 255.
pub fn load_mask(path: &Path) -> Result<Raster> {
    let r = load_png(path)?;
    if !r.is_binary() {
        return Err(file_err(path, "mask pixels must be 0 or 255"));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub id: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, format!("invalid manifest: {e}")))
}

/// Manifest paths are resolved against the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<SamplePair>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(manifest)?;
    entries
        .iter()
        .map(|e| {
            let (ip, mp) = (base.join(&e.image), base.join(&e.mask));
            let image = load_png(&ip)?;
            let mask = load_mask(&mp)?;
            if image.dims() != mask.dims() {
                return Err(file_err(
                    &mp,
                    format!("mask is {}x{} but image {} is {}x{}", mask.height, mask.width, ip.display(), image.height, image.width),
                ));
            }
            Ok(SamplePair { id: e.id.clone(), image, mask })
        })
        .collect()
}

/// Writes `images/<id>.png`, `masks/<id>.png` and `manifest.json` under
/// `dir`; returns the manifest path.
pub fn save_dataset(dir: &Path, pairs: &[SamplePair]) -> Result<PathBuf> {
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let e = ManifestEntry {
            image: PathBuf::from("images").join(format!("{}.png", p.id)),
            mask: PathBuf::from("masks").join(format!("{}.png", p.id)),
            id: p.id.clone(),
        };
        save_png(&dir.join(&e.image), &p.image)?;
        save_png(&dir.join(&e.mask), &p.mask)?;
        entries.push(e);
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(path)
}
