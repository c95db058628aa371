//! Dense tensors, raster kernels, and a reverse-mode gradient tape.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{
    bilinear_resize, conv2d, gumbel_softmax, relu, resize_bilinear, scaled_extent, softmax, spatial_gradient_norm,
};
pub use tape::{GradTape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
