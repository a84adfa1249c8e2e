//! Voxelize a cloud, then run submanifold, strided and transposed sparse convolutions.

use std::sync::Arc;

use mm2d3d::scene::{generate, SceneSpec};
use mm2d3d::sparse::{build_rulebook, sparse_conv_features, voxelize};
use mm2d3d::Tensor;

fn main() -> mm2d3d::Result<()> {
    let ds = generate(&SceneSpec::day(3), 1)?;
    let cloud = &ds.samples[0].cloud;
    let vox = voxelize(&cloud.positions, 0.2)?;
    println!("{} points -> {} voxels", cloud.len(), vox.voxels.len());

    let (sub, _) = build_rulebook(&vox.voxels, 3, 1, true)?;
    let (down, coarse) = build_rulebook(&vox.voxels, 2, 2, false)?;
    println!("submanifold 3^3: {} pairs; strided 2^3: {} -> {} voxels", sub.pair_count(), vox.voxels.len(), coarse.len());

    let colors = cloud.colors.as_ref().expect("generated clouds carry colors");
    let x = Tensor::new(&[vox.voxels.len(), 3], vox.winner.iter().flat_map(|&p| colors[p]).collect())?;
    let w = |k: usize, ci: usize, co: usize| Tensor::new(&[k, ci, co], (0..k * ci * co).map(|i| ((i % 7) as f32 - 3.0) * 0.05).collect());

    let y = sparse_conv_features(&x, &w(27, 3, 8)?, &Arc::new(sub))?;
    let z = sparse_conv_features(&y, &w(8, 8, 16)?, &Arc::new(down.clone()))?;
    let up = sparse_conv_features(&z, &w(8, 16, 8)?, &Arc::new(down.transposed()))?;
    println!("features {:?} -> {:?} -> {:?}", y.shape(), z.shape(), up.shape());

    let per_point = up.gather_rows(&vox.point_to_voxel)?;
    println!("per-point features {:?}", per_point.shape());
    Ok(())
}
