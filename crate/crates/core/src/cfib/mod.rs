//! Cross-frequency interaction: high-frequency refinement, global context
//! over the low-frequency base and their gated fusion.

pub mod fgm;
pub mod hfb;
pub mod st;

pub use fgm::{Fgm, FgmIntermediates};
pub use hfb::{split_sizes, Hfb, HfbIntermediates, Refine};
pub use st::{EncoderLayer, SpatialTransformer, StConfig};
