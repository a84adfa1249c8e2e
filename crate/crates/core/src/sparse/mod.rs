//! Sparse voxel engine: voxelization, hash-indexed active sets, rulebooks,
//! and gather-scatter sparse convolution for a small 3D U-Net.

mod conv;
mod hash;
mod rulebook;
mod voxel;

pub use conv::{sparse_conv, sparse_conv_features, sparse_upsample};
pub use hash::{CoordHash, VoxelCoord, COORD_LIMIT};
pub use rulebook::{build_rulebook, kernel_offsets, Rulebook};
pub use voxel::{voxelize, voxelize_batch, SparseTensor, VoxelSet, Voxelization};
