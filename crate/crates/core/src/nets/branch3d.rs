use std::sync::Arc;

use super::params::{Init, ParamStore, Params};
use super::{BranchOutput, ModelConfig};
use crate::error::{Error, Result};
use crate::sparse::{build_rulebook, sparse_conv_features, voxelize_batch, Rulebook, VoxelSet, Voxelization};
use crate::tensor::{Elem, Tensor};

/// Voxel sets and rulebooks of the sparse U-Net for one batch.
#[derive(Clone, Debug)]
pub struct VoxelGeometry {
    pub voxelization: Voxelization,
    /// Active sets from finest to coarsest.
    pub levels: Vec<Arc<VoxelSet>>,
    pub submanifold: Vec<Arc<Rulebook>>,
    /// `down[l]` pools level `l` into level `l + 1`.
    pub down: Vec<Arc<Rulebook>>,
    pub up: Vec<Arc<Rulebook>>,
}

impl VoxelGeometry {
    pub fn build(clouds: &[&[[f32; 3]]], voxel_size: f32, levels: usize) -> Result<Self> {
        let vox = voxelize_batch(clouds, voxel_size)?;
        let mut sets = vec![Arc::clone(&vox.voxels)];
        let mut submanifold = Vec::new();
        let mut down = Vec::new();
        let mut up = Vec::new();
        for l in 0..levels {
            let (rb, _) = build_rulebook(&sets[l], 3, 1, true)?;
            submanifold.push(Arc::new(rb));
            if l + 1 < levels {
                let (rb, coarse) = build_rulebook(&sets[l], 2, 2, false)?;
                up.push(Arc::new(rb.transposed()));
                down.push(Arc::new(rb));
                sets.push(coarse);
            }
        }
        Ok(Self {
            voxelization: vox,
            levels: sets,
            submanifold,
            down,
            up,
        })
    }
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, init: &mut Init) -> Result<()> {
    let w = &cfg.widths_3d;
    store.insert("3d.alpha.w", &[1, 3], init.normal(3, 0.1))?;
    store.insert("3d.alpha.b", &[1], vec![0.0])?;
    let mut sub = |store: &mut ParamStore, name: String, k: usize, cin: usize, cout: usize| -> Result<()> {
        store.insert(format!("{name}.w"), &[k, cin, cout], init.he(k * cin * cout, k * cin))?;
        store.insert(format!("{name}.b"), &[cout], vec![0.0; cout])
    };
    sub(store, "3d.enc0.in".into(), 27, 3, w[0])?;
    sub(store, "3d.enc0.conv".into(), 27, w[0], w[0])?;
    for l in 1..w.len() {
        sub(store, format!("3d.down{l}"), 8, w[l - 1], w[l])?;
        sub(store, format!("3d.enc{l}.conv"), 27, w[l], w[l])?;
    }
    for l in (0..w.len() - 1).rev() {
        sub(store, format!("3d.up{l}"), 8, w[l + 1], w[l])?;
        sub(store, format!("3d.dec{l}.conv"), 27, 2 * w[l], w[l])?;
    }
    let (k, f) = (cfg.num_classes, w[0]);
    for head in ["main", "aux"] {
        store.insert(format!("3d.head.{head}.w"), &[k, f], init.he(k * f, f))?;
        store.insert(format!("3d.head.{head}.b"), &[k], vec![0.0; k])?;
    }
    Ok(())
}

fn sconv<T: Elem>(p: &Params<T>, name: &str, x: &Tensor<T>, rb: &Arc<Rulebook>) -> Result<Tensor<T>> {
    let y = sparse_conv_features(x, p.get(&format!("{name}.w"))?, rb)?;
    Ok(y.add_channel_bias(p.get(&format!("{name}.b"))?)?.relu())
}

/// Per-point gate `α = σ(w·rgb + b)`, `[N, 1]`.
pub fn alpha<T: Elem>(p: &Params<T>, colors: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(colors.linear(p.get("3d.alpha.w")?, Some(p.get("3d.alpha.b")?))?.sigmoid())
}

/// Voxel input features `α·rgb` of each voxel's representative point, `[M, 3]`.
pub fn voxel_features<T: Elem>(p: &Params<T>, colors: &Tensor<T>, geo: &VoxelGeometry) -> Result<Tensor<T>> {
    let win = colors.gather_rows(&geo.voxelization.winner)?;
    let a = alpha(p, &win)?;
    win.scale_rows(&a)
}

/// Sparse U-Net from voxel input features to per-point logits.
pub(crate) fn forward_from_voxels<T: Elem>(
    p: &Params<T>,
    cfg: &ModelConfig,
    input: &Tensor<T>,
    geo: &VoxelGeometry,
) -> Result<BranchOutput<T>> {
    let levels = cfg.widths_3d.len();
    if geo.levels.len() != levels {
        return Err(Error::Consistency(format!(
            "voxel geometry has {} levels, model expects {levels}",
            geo.levels.len()
        )));
    }
    let x = sconv(p, "3d.enc0.in", input, &geo.submanifold[0])?;
    let mut skips = vec![sconv(p, "3d.enc0.conv", &x, &geo.submanifold[0])?];
    for l in 1..levels {
        let d = sconv(p, &format!("3d.down{l}"), &skips[l - 1], &geo.down[l - 1])?;
        skips.push(sconv(p, &format!("3d.enc{l}.conv"), &d, &geo.submanifold[l])?);
    }
    let mut x = skips[levels - 1].clone();
    for l in (0..levels - 1).rev() {
        let u = sconv(p, &format!("3d.up{l}"), &x, &geo.up[l])?;
        let cat = Tensor::concat(&[u, skips[l].clone()], 1)?;
        x = sconv(p, &format!("3d.dec{l}.conv"), &cat, &geo.submanifold[l])?;
    }
    let out = super::heads(p, "3d", x)?;
    let idx = &geo.voxelization.point_to_voxel;
    Ok(BranchOutput {
        main_logits: out.main_logits.gather_rows(idx)?,
        aux_logits: out.aux_logits.gather_rows(idx)?,
        features: out.features.gather_rows(idx)?,
    })
}
