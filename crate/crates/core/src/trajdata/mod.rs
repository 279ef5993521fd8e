//! Data pipeline: trajectory logs, rasterization, synthetic scenes,
//! augmentation and image/manifest I/O.

pub mod augment;
pub mod io;
pub mod log;
pub mod rasterize;
pub mod synth;

use crate::raster::Raster;

pub use augment::{augment, augment_raster, AugmentOp};
pub use io::{load_dataset, load_mask, load_png, save_dataset, save_png};
pub use log::{TrajectoryLog, TrajectoryPoint};
pub use rasterize::{rasterize, rasterize_points, Bounds, RasterReport, RasterSpec};
pub use synth::{synth_scene, synth_scene_detailed, SynthSpec};

/// A trajectory image in `[0, 1]` with its binary road mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: Raster,
    pub mask: Raster,
}
