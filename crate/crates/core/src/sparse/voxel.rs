use std::sync::Arc;

use super::hash::{CoordHash, VoxelCoord};
use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Active voxel coordinates with a hash index (coord ↔ row bijection).
#[derive(Clone, Debug)]
pub struct VoxelSet {
    coords: Vec<VoxelCoord>,
    index: CoordHash,
}

impl VoxelSet {
    /// Builds a set from unique coordinates; duplicates are a consistency error.
    pub fn from_coords(coords: Vec<VoxelCoord>) -> Result<Self> {
        let mut index = CoordHash::with_capacity(coords.len());
        for (row, c) in coords.iter().enumerate() {
            if index.get_or_insert(*c, row as u32)? != row as u32 {
                return Err(Error::Consistency(format!("duplicate voxel {c:?}")));
            }
        }
        Ok(Self { coords, index })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn row(&self, c: VoxelCoord) -> Option<usize> {
        self.index.get(c).map(|r| r as usize)
    }
}

/// Features attached to an active voxel set.
#[derive(Clone, Debug)]
pub struct SparseTensor<T: Elem = f32> {
    pub voxels: Arc<VoxelSet>,
    pub features: Tensor<T>,
}

impl<T: Elem> SparseTensor<T> {
    pub fn new(voxels: Arc<VoxelSet>, features: Tensor<T>) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != voxels.len() {
            return Err(Error::dim(format!(
                "features {:?} do not match {} active voxels",
                features.shape(),
                voxels.len()
            )));
        }
        Ok(Self { voxels, features })
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Result of discretizing one or more point clouds.
#[derive(Clone, Debug)]
pub struct Voxelization {
    pub voxels: Arc<VoxelSet>,
    /// Active-voxel row for every input point (all clouds concatenated).
    pub point_to_voxel: Vec<usize>,
    /// Index of the point that represents each voxel.
    pub winner: Vec<usize>,
}

/// Voxelizes a single cloud with batch tag 0.
pub fn voxelize(positions: &[[f32; 3]], voxel_size: f32) -> Result<Voxelization> {
    voxelize_batch(&[positions], voxel_size)
}

/// Voxelizes several clouds into one voxel set, tagging voxels with the cloud
/// index. Point indices in the result run over the concatenated clouds.
///
/// Voxel coordinates are `floor(p / voxel_size)`. Rows appear in order of the
/// first point that lands in each voxel; the representative point is the one
/// nearest the voxel center, lowest index on ties.
pub fn voxelize_batch(clouds: &[&[[f32; 3]]], voxel_size: f32) -> Result<Voxelization> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::Domain(format!("voxel size must be positive, got {voxel_size}")));
    }
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Err(Error::Domain("cannot voxelize an empty point cloud".into()));
    }
    if clouds.len() > u16::MAX as usize {
        return Err(Error::Domain("too many clouds in one batch".into()));
    }
    let vs = voxel_size as f64;
    let mut index = CoordHash::with_capacity(total);
    let mut coords = Vec::new();
    let mut winner: Vec<usize> = Vec::new();
    let mut best: Vec<f64> = Vec::new();
    let mut point_to_voxel = Vec::with_capacity(total);
    let mut pi = 0;
    for (b, cloud) in clouds.iter().enumerate() {
        for p in cloud.iter() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("non-finite point {p:?}")));
            }
            let cell = p.map(|v| (v as f64 / vs).floor());
            let c = VoxelCoord::new(b as u16, cell[0] as i32, cell[1] as i32, cell[2] as i32);
            let row = index.get_or_insert(c, coords.len() as u32)? as usize;
            let d2: f64 = (0..3)
                .map(|k| {
                    let center = (cell[k] + 0.5) * vs;
                    (p[k] as f64 - center).powi(2)
                })
                .sum();
            if row == coords.len() {
                coords.push(c);
                winner.push(pi);
                best.push(d2);
            } else if d2 < best[row] {
                winner[row] = pi;
                best[row] = d2;
            }
            point_to_voxel.push(row);
            pi += 1;
        }
    }
    Ok(Voxelization {
        voxels: Arc::new(VoxelSet { coords, index }),
        point_to_voxel,
        winner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn same_cell_collapses() {
        let v = voxelize(&[[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]], 1.0).unwrap();
        assert_eq!(v.voxels.coords(), &[VoxelCoord::new(0, 0, 0, 0)]);
        assert_eq!(v.point_to_voxel, vec![0, 0]);
    }

    #[test]
    fn neighbouring_cells() {
        let v = voxelize(&[[0.5, 0.0, 0.0], [1.5, 0.0, 0.0]], 1.0).unwrap();
        assert_eq!(
            v.voxels.coords(),
            &[VoxelCoord::new(0, 0, 0, 0), VoxelCoord::new(0, 1, 0, 0)]
        );
    }

    #[test]
    fn negative_coordinates_floor() {
        let v = voxelize(&[[-0.1, -1.0, 0.0]], 0.5).unwrap();
        assert_eq!(v.voxels.coords(), &[VoxelCoord::new(0, -1, -2, 0)]);
    }

    #[test]
    fn empty_cloud_is_domain_error() {
        assert!(matches!(voxelize(&[], 1.0), Err(Error::Domain(_))));
        assert!(matches!(voxelize(&[[0.0; 3]], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nearest_to_center_wins_ties_to_lowest_index() {
        // center of voxel (0,0,0) at 0.5
        let pts = [[0.1, 0.5, 0.5], [0.45, 0.5, 0.5], [0.55, 0.5, 0.5]];
        let v = voxelize(&pts, 1.0).unwrap();
        assert_eq!(v.winner, vec![1]);
        assert_eq!(v.point_to_voxel, vec![0, 0, 0]);
    }

    #[test]
    fn active_count_matches_set_of_floors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f32; 3]> = (0..1000)
            .map(|_| [rng.random::<f32>() * 4.0, rng.random::<f32>() * 4.0, rng.random::<f32>() * 4.0])
            .collect();
        let set: BTreeSet<[i64; 3]> = pts
            .iter()
            .map(|p| p.map(|v| (v as f64 / 0.25).floor() as i64))
            .collect();
        let v = voxelize(&pts, 0.25).unwrap();
        assert_eq!(v.voxels.len(), set.len());
        for (i, p) in pts.iter().enumerate() {
            let c = v.voxels.coords()[v.point_to_voxel[i]];
            let f = p.map(|v| (v as f64 / 0.25).floor() as i32);
            assert_eq!([c.x, c.y, c.z], f);
        }
    }

    #[test]
    fn batches_do_not_collide() {
        let a = [[0.1f32, 0.1, 0.1]];
        let v = voxelize_batch(&[&a, &a], 1.0).unwrap();
        assert_eq!(v.voxels.len(), 2);
        assert_eq!(v.point_to_voxel, vec![0, 1]);
        assert_eq!(v.winner, vec![0, 1]);
    }
}
