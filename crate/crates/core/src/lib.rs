//! Multi-modal 2D/3D semantic segmentation with cross-modal unsupervised
//! domain adaptation.
//!
//! A 2D branch (dual RGB + sparse-depth encoder U-Net) and a 3D branch
//! (sparse voxel U-Net over RGB-gated voxel features) each predict per-point
//! classes. Auxiliary heads let each branch mimic the other, and a
//! pseudo-label round adapts both to an unlabeled target domain.

pub mod cli;
pub(crate) mod codec;
pub mod erf;
pub mod error;
pub mod geometry;
pub mod nets;
pub mod scene;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Elem, Tensor};
