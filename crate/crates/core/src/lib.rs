//! Road extraction from rasterized GNSS trajectories: frequency
//! decomposition, cross-frequency interaction, progressive decoding, plus
//! the data pipeline and evaluation metrics around them.

pub mod cfib;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod layers;
pub mod loss;
pub mod lms;
pub mod metrics;
pub mod model;
pub mod prd;
pub mod predict;
pub mod raster;
pub mod seed;
pub mod suites;
pub mod train;
pub mod trajdata;

pub use error::{Error, Result};
pub use model::{Ablation, Lfinet, ModelConfig};
pub use raster::Raster;
