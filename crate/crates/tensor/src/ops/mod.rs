pub mod attention;
pub mod conv;
pub mod elementwise;
pub mod matmul;
pub mod norm;
pub mod pool;
pub mod reduce;
pub mod shape;
pub mod softmax;
pub mod upsample;

pub use attention::scaled_dot_attention;
pub use conv::{conv2d, conv_out_extent, conv_transpose2d, same_padding, Conv2dParams};
pub use elementwise::{activation, gelu_scalar, sigmoid_scalar, Activation};
pub use matmul::{linear, matmul};
pub use norm::{batch_norm2d, layer_norm, NormMode, BN_MOMENTUM, NORM_EPS};
pub use pool::avg_pool2x2;
pub use reduce::global_avg_pool;
pub use shape::{concat, slice_channels};
pub use softmax::softmax;
pub use upsample::bilinear_upsample;
