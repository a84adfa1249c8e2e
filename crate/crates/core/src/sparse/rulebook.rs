use std::sync::Arc;

use super::hash::VoxelCoord;
use super::voxel::VoxelSet;
use crate::error::{Error, Result};

/// Gather-scatter plan: for each kernel offset, the `(input row, output row)`
/// pairs it connects.
#[derive(Clone, Debug)]
pub struct Rulebook {
    pub offsets: Vec<[i32; 3]>,
    pub pairs: Vec<Vec<(u32, u32)>>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Rulebook {
    pub fn kernel_volume(&self) -> usize {
        self.offsets.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// Swaps the roles of input and output rows (the adjoint pairing).
    pub fn transposed(&self) -> Rulebook {
        Rulebook {
            offsets: self.offsets.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|ps| ps.iter().map(|&(i, o)| (o, i)).collect())
                .collect(),
            n_in: self.n_out,
            n_out: self.n_in,
        }
    }
}

/// Offsets of a cubic kernel. Odd extents are centered on zero; even extents
/// (used by strided transitions) run over `0..extent`.
pub fn kernel_offsets(extent: usize) -> Vec<[i32; 3]> {
    let e = extent as i32;
    let lo = if extent % 2 == 1 { -(e / 2) } else { 0 };
    let mut out = Vec::with_capacity(extent.pow(3));
    for dx in lo..lo + e {
        for dy in lo..lo + e {
            for dz in lo..lo + e {
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

/// Builds the rulebook of a sparse convolution and the output voxel set.
///
/// * submanifold (stride 1, odd extent): outputs are the input voxels; a pair
///   `(i, o)` exists for offset `d` iff `coord(o) + d == coord(i)`.
/// * regular stride 1 (odd extent): outputs are every voxel some input can
///   reach, i.e. `coord(i) - d`, which dilates the active set.
/// * strided (extent == stride): outputs are the unique `floor(coord / stride)`
///   and each input feeds its pooled voxel through offset `coord - stride·out`.
pub fn build_rulebook(
    input: &VoxelSet,
    kernel_extent: usize,
    stride: usize,
    submanifold: bool,
) -> Result<(Rulebook, Arc<VoxelSet>)> {
    if kernel_extent == 0 || stride == 0 {
        return Err(Error::usage("kernel extent and stride must be positive"));
    }
    match stride {
        1 => {
            if kernel_extent % 2 == 0 {
                return Err(Error::usage("stride-1 sparse convolution needs an odd kernel extent"));
            }
            if submanifold {
                submanifold_rulebook(input, kernel_extent)
            } else {
                dilating_rulebook(input, kernel_extent)
            }
        }
        s => {
            if kernel_extent != s {
                return Err(Error::usage(format!(
                    "strided sparse convolution needs extent == stride, got {kernel_extent} and {s}"
                )));
            }
            if submanifold {
                return Err(Error::usage("submanifold convolution cannot be strided"));
            }
            strided_rulebook(input, s)
        }
    }
}

fn submanifold_rulebook(input: &VoxelSet, extent: usize) -> Result<(Rulebook, Arc<VoxelSet>)> {
    let offsets = kernel_offsets(extent);
    let mut pairs = vec![Vec::new(); offsets.len()];
    for (k, d) in offsets.iter().enumerate() {
        for (o, c) in input.coords().iter().enumerate() {
            if let Some(i) = input.row(c.offset(*d)) {
                pairs[k].push((i as u32, o as u32));
            }
        }
    }
    let out = Arc::new(input.clone());
    Ok((
        Rulebook {
            offsets,
            pairs,
            n_in: input.len(),
            n_out: input.len(),
        },
        out,
    ))
}

fn dilating_rulebook(input: &VoxelSet, extent: usize) -> Result<(Rulebook, Arc<VoxelSet>)> {
    let offsets = kernel_offsets(extent);
    let mut out_coords: Vec<VoxelCoord> = Vec::new();
    let mut out_index = super::hash::CoordHash::with_capacity(input.len() * 2);
    let mut pairs = vec![Vec::new(); offsets.len()];
    for (i, c) in input.coords().iter().enumerate() {
        for (k, d) in offsets.iter().enumerate() {
            let oc = c.offset([-d[0], -d[1], -d[2]]);
            let o = out_index.get_or_insert(oc, out_coords.len() as u32)?;
            if o as usize == out_coords.len() {
                out_coords.push(oc);
            }
            pairs[k].push((i as u32, o));
        }
    }
    let out = Arc::new(VoxelSet::from_coords(out_coords)?);
    Ok((
        Rulebook {
            offsets,
            pairs,
            n_in: input.len(),
            n_out: out.len(),
        },
        out,
    ))
}

fn strided_rulebook(input: &VoxelSet, stride: usize) -> Result<(Rulebook, Arc<VoxelSet>)> {
    let s = stride as i32;
    let offsets = kernel_offsets(stride);
    let mut out_coords: Vec<VoxelCoord> = Vec::new();
    let mut out_index = super::hash::CoordHash::with_capacity(input.len());
    let mut pairs = vec![Vec::new(); offsets.len()];
    for (i, c) in input.coords().iter().enumerate() {
        let oc = VoxelCoord::new(c.batch, c.x.div_euclid(s), c.y.div_euclid(s), c.z.div_euclid(s));
        let o = out_index.get_or_insert(oc, out_coords.len() as u32)?;
        if o as usize == out_coords.len() {
            out_coords.push(oc);
        }
        let d = [c.x - s * oc.x, c.y - s * oc.y, c.z - s * oc.z];
        let k = ((d[0] * s + d[1]) * s + d[2]) as usize;
        pairs[k].push((i as u32, o));
    }
    let out = Arc::new(VoxelSet::from_coords(out_coords)?);
    Ok((
        Rulebook {
            offsets,
            pairs,
            n_in: input.len(),
            n_out: out.len(),
        },
        out,
    ))
}
