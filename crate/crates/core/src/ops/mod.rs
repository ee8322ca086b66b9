//! Classical (non-neural) image operations.
//!
//! All operations are pure functions of their inputs and never modify the
//! buffers they are given.

mod color;
mod filter;
mod kmeans;
mod region;

pub use color::{colorize, desaturate, grayscale, hsl_to_rgb, hue_saturation, invert, rgb_to_hsl};
pub use filter::{edge_detect, gaussian_blur, gaussian_kernel, resize_bicubic};
pub use kmeans::{kmeans_cluster, KMeansConfig, KMeansOutput};
pub use region::{selective_apply, RegionMask};

use thiserror::Error;

use crate::raster::ImageError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{op} does not accept {channels}-channel images")]
    Channels { op: &'static str, channels: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("k = {k} exceeds the pixel count {pixels}")]
    TooManyClusters { k: usize, pixels: usize },
    #[error("invalid k-means configuration: {0}")]
    KMeansConfig(&'static str),
    #[error("sigma must be finite and non-negative, got {0}")]
    Sigma(f64),
    #[error("unsupported scale {0}; expected 2, 3 or 4")]
    Scale(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask weights must lie in [0, 1]; found {value} at pixel {index}")]
    MaskWeight { index: usize, value: f32 },
}
