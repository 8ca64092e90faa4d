//! Pixel-wise label fusion: transformer (TLAM) and convolution-style (CLAM)
//! label mergers, a TLT1 tensor format, a small reverse-mode tape for the
//! toy generator/discriminator harness, and evaluation utilities.

pub mod autodiff;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod labels;
pub mod manifest;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pca;
pub mod ppm;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod tlt;
pub mod train;

pub use error::{Error, Result};
pub use fusion::{ConceptTensor, MergerConfig, MergerParams, Variant};
pub use labels::{LabelKind, LabelMap, LabelSet};
pub use tensor::{DType, Tensor};
