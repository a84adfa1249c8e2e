//! The two segmentation branches.
//!
//! * 2D: separate RGB and sparse-depth encoders (four stride-2 blocks each),
//!   a transposed-conv decoder taking both encoders' skips at every scale, and
//!   per-point linear heads on features gathered at the projected pixels.
//! * 3D: per-point gate `α = σ(linear(rgb))`, voxel features `α·rgb` of each
//!   voxel's representative point, a three-level sparse U-Net, and per-voxel
//!   heads read back to points.
//!
//! Both branches have a main and an auxiliary (mimicry) head.

mod branch2d;
mod branch3d;
mod params;

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use branch3d::{alpha, voxel_features, VoxelGeometry};
pub use params::{ParamEntry, ParamStore, Params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::geometry::{make_sparse_depth, pixel_locations, Intrinsics};
use crate::scene::Sample;
use crate::tensor::{Elem, Tensor};
use params::Init;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Encoder widths at 1/2, 1/4, 1/8, 1/16 resolution.
    pub widths_2d: Vec<usize>,
    /// Sparse U-Net widths, finest level first.
    pub widths_3d: Vec<usize>,
    pub voxel_size: f32,
    /// Depth-map normalization: the encoder sees `z / depth_scale`.
    pub depth_scale: f32,
    /// When false the depth encoder is fed zeros (RGB-only ablation).
    pub depth_input: bool,
    /// Adds a linear classifier over concatenated 2D and 3D features.
    pub fusion_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: crate::scene::NUM_CLASSES,
            widths_2d: vec![16, 32, 64, 128],
            widths_3d: vec![16, 32, 64],
            voxel_size: 0.2,
            depth_scale: 20.0,
            depth_input: true,
            fusion_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.widths_2d.len() != 4 {
            return bad("widths_2d needs exactly four scales (1/2 .. 1/16)");
        }
        if self.widths_3d.is_empty() || self.widths_3d.len() > 5 {
            return bad("widths_3d needs 1 to 5 levels");
        }
        if self.widths_2d.iter().chain(&self.widths_3d).any(|&w| w == 0) {
            return bad("widths must be positive");
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return bad("depth_scale must be positive");
        }
        Ok(())
    }

    pub fn feature_width_2d(&self) -> usize {
        self.widths_2d[0]
    }

    pub fn feature_width_3d(&self) -> usize {
        self.widths_3d[0]
    }
}

/// Per-point outputs of one branch.
#[derive(Clone, Debug)]
pub struct BranchOutput<T: Elem = f32> {
    pub main_logits: Tensor<T>,
    pub aux_logits: Tensor<T>,
    /// Decoder features the heads read, `[N, F]`.
    pub features: Tensor<T>,
}

fn heads<T: Elem>(p: &Params<T>, branch: &str, features: Tensor<T>) -> Result<BranchOutput<T>> {
    let head = |h: &str| -> Result<Tensor<T>> {
        features.linear(
            p.get(&format!("{branch}.head.{h}.w"))?,
            Some(p.get(&format!("{branch}.head.{h}.b"))?),
        )
    };
    Ok(BranchOutput {
        main_logits: head("main")?,
        aux_logits: head("aux")?,
        features,
    })
}

/// What the network sees of one sample after (optional) augmentation.
///
/// The 2D branch projects `points_2d`; the 3D branch voxelizes `points_3d`.
/// Both lists describe the same points in the same order.
#[derive(Clone, Debug)]
pub struct Input {
    pub image: Tensor<f32>,
    pub intrinsics: Intrinsics,
    pub points_2d: Vec<[f32; 3]>,
    pub points_3d: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
}

impl Input {
    pub fn from_sample(s: &Sample) -> Result<Self> {
        let colors = s
            .cloud
            .colors
            .clone()
            .ok_or_else(|| Error::usage("sample has no point colors"))?;
        Ok(Self {
            image: s.image.clone(),
            intrinsics: s.intrinsics,
            points_2d: s.cloud.positions.clone(),
            points_3d: s.cloud.positions.clone(),
            colors,
        })
    }
}

/// Several inputs stacked for one forward pass. Points of all samples are
/// concatenated in order; `ranges[i]` locates sample `i`'s rows.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    /// Normalized sparse depth `[B, 1, H, W]` (zeros when depth is disabled).
    pub depth: Tensor<f32>,
    pub pixels: Vec<(usize, usize, usize)>,
    pub colors: Tensor<f32>,
    pub geometry: Arc<VoxelGeometry>,
    pub ranges: Vec<Range<usize>>,
}

impl Batch {
    pub fn new(inputs: &[Input], cfg: &ModelConfig) -> Result<Self> {
        let first = inputs.first().ok_or_else(|| Error::usage("empty batch"))?;
        let (h, w) = (first.intrinsics.height, first.intrinsics.width);
        let mut images = Vec::with_capacity(inputs.len() * 3 * h * w);
        let mut depth = Vec::with_capacity(inputs.len() * h * w);
        let mut pixels = Vec::new();
        let mut colors = Vec::new();
        let mut ranges = Vec::with_capacity(inputs.len());
        for (b, x) in inputs.iter().enumerate() {
            let k = &x.intrinsics;
            if (k.height, k.width) != (h, w) || x.image.shape() != [3, h, w] {
                return Err(Error::dim(format!(
                    "batch mixes image sizes: {:?} vs {h}x{w}",
                    x.image.shape()
                )));
            }
            let n = x.points_2d.len();
            if x.points_3d.len() != n || x.colors.len() != n {
                return Err(Error::dim(format!(
                    "sample {b}: {n} projected points, {} voxelized points, {} colors",
                    x.points_3d.len(),
                    x.colors.len()
                )));
            }
            images.extend_from_slice(x.image.data());
            if cfg.depth_input {
                let d = make_sparse_depth(&x.points_2d, k)?;
                depth.extend(d.data().iter().map(|z| z / cfg.depth_scale));
            } else {
                depth.extend(std::iter::repeat_n(0.0, h * w));
            }
            pixels.extend(pixel_locations(&x.points_2d, k)?.into_iter().map(|(r, c)| (b, r, c)));
            colors.extend(x.colors.iter().flatten().copied());
            let start = ranges.last().map_or(0, |r: &Range<usize>| r.end);
            ranges.push(start..start + n);
        }
        let clouds: Vec<&[[f32; 3]]> = inputs.iter().map(|x| x.points_3d.as_slice()).collect();
        let geometry = VoxelGeometry::build(&clouds, cfg.voxel_size, cfg.widths_3d.len())?;
        let b = inputs.len();
        let n = pixels.len();
        Ok(Self {
            images: Tensor::new(&[b, 3, h, w], images)?,
            depth: Tensor::new(&[b, 1, h, w], depth)?,
            pixels,
            colors: Tensor::new(&[n, 3], colors)?,
            geometry: Arc::new(geometry),
            ranges,
        })
    }

    pub fn num_points(&self) -> usize {
        self.pixels.len()
    }
}

/// Outputs of both branches, plus the input tensors used (so callers can read
/// their gradients).
pub struct ForwardOutput<T: Elem = f32> {
    pub out2d: BranchOutput<T>,
    pub out3d: BranchOutput<T>,
    pub fusion_logits: Option<Tensor<T>>,
    pub image: Tensor<T>,
    pub voxel_input: Tensor<T>,
}

/// Network inputs in the working precision. Set `requires_grad` on any of them
/// to obtain input gradients.
pub struct Inputs<T: Elem> {
    pub image: Tensor<T>,
    pub depth: Tensor<T>,
    pub colors: Tensor<T>,
}

impl<T: Elem> Inputs<T> {
    pub fn from_batch(batch: &Batch) -> Self {
        Self {
            image: batch.images.cast(),
            depth: batch.depth.cast(),
            colors: batch.colors.cast(),
        }
    }
}

/// Architecture plus trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

const META: [&str; 6] = [
    "meta.num_classes",
    "meta.widths_2d",
    "meta.widths_3d",
    "meta.voxel_size",
    "meta.depth_scale",
    "meta.flags",
];

impl Model {
    /// Fresh He-initialized model; a pure function of `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        branch2d::register(&mut params, &config, &mut init)?;
        branch3d::register(&mut params, &config, &mut init)?;
        if config.fusion_head {
            let (k, f) = (config.num_classes, config.feature_width_2d() + config.feature_width_3d());
            params.insert("fusion.w", &[k, f], init.he(k * f, f))?;
            params.insert("fusion.b", &[k], vec![0.0; k])?;
        }
        Ok(Self { config, params })
    }

    pub fn forward(&self, params: &Params<f32>, batch: &Batch) -> Result<ForwardOutput<f32>> {
        self.forward_with(params, batch, Inputs::from_batch(batch))
    }

    pub fn forward_with<T: Elem>(
        &self,
        params: &Params<T>,
        batch: &Batch,
        inputs: Inputs<T>,
    ) -> Result<ForwardOutput<T>> {
        let cfg = &self.config;
        let out2d = branch2d::forward(params, cfg, &inputs.image, &inputs.depth, &batch.pixels)?;
        let voxel_input = voxel_features(params, &inputs.colors, &batch.geometry)?;
        let out3d = branch3d::forward_from_voxels(params, cfg, &voxel_input, &batch.geometry)?;
        let fusion_logits = if cfg.fusion_head {
            Some(fusion_head(
                &out2d.features,
                &out3d.features,
                params.get("fusion.w")?,
                params.get("fusion.b")?,
            )?)
        } else {
            None
        };
        Ok(ForwardOutput {
            out2d,
            out3d,
            fusion_logits,
            image: inputs.image,
            voxel_input,
        })
    }

    /// Untracked forward pass.
    pub fn infer(&self, batch: &Batch) -> Result<ForwardOutput<f32>> {
        self.forward(&self.params.constants(), batch)
    }

    /// 2D branch on a single image.
    pub fn forward_2d(
        &self,
        image: &Tensor<f32>,
        sparse_depth: &Tensor<f32>,
        points: &[[f32; 3]],
        k: &Intrinsics,
    ) -> Result<BranchOutput<f32>> {
        let (h, w) = (k.height, k.width);
        if image.shape() != [3, h, w] || sparse_depth.shape() != [1, h, w] {
            return Err(Error::dim(format!(
                "image {:?} and depth {:?} must be [3|1, {h}, {w}]",
                image.shape(),
                sparse_depth.shape()
            )));
        }
        let image = image.reshape(&[1, 3, h, w])?;
        let scale = self.config.depth_scale;
        let depth = Tensor::new(
            &[1, 1, h, w],
            sparse_depth.data().iter().map(|z| z / scale).collect(),
        )?;
        let pixels: Vec<_> = pixel_locations(points, k)?.into_iter().map(|(r, c)| (0, r, c)).collect();
        branch2d::forward(&self.params.constants(), &self.config, &image, &depth, &pixels)
    }

    /// 3D branch on a single cloud.
    pub fn forward_3d(&self, points: &[[f32; 3]], colors: &[[f32; 3]]) -> Result<BranchOutput<f32>> {
        if points.len() != colors.len() {
            return Err(Error::dim(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        let geo = VoxelGeometry::build(&[points], self.config.voxel_size, self.config.widths_3d.len())?;
        let p = self.params.constants();
        let c = Tensor::new(&[colors.len(), 3], colors.iter().flatten().copied().collect())?;
        let x = voxel_features(&p, &c, &geo)?;
        branch3d::forward_from_voxels(&p, &self.config, &x, &geo)
    }

    fn meta_store(&self) -> Result<ParamStore> {
        let c = &self.config;
        let mut s = ParamStore::new();
        let flags = [c.depth_input as u8 as f32, c.fusion_head as u8 as f32];
        s.insert(META[0], &[1], vec![c.num_classes as f32])?;
        s.insert(META[1], &[c.widths_2d.len()], c.widths_2d.iter().map(|&w| w as f32).collect())?;
        s.insert(META[2], &[c.widths_3d.len()], c.widths_3d.iter().map(|&w| w as f32).collect())?;
        s.insert(META[3], &[1], vec![c.voxel_size])?;
        s.insert(META[4], &[1], vec![c.depth_scale])?;
        s.insert(META[5], &[2], flags.to_vec())?;
        for e in self.params.entries() {
            s.insert(e.name.clone(), &e.shape, e.data.to_vec())?;
        }
        Ok(s)
    }

    /// Checkpoint bytes: architecture entries (`meta.*`) followed by parameters.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.meta_store()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let all = ParamStore::from_bytes(bytes)?;
        let meta = |name: &str| -> Result<Vec<f32>> {
            all.get(name)
                .map(|e| e.data.to_vec())
                .ok_or_else(|| Error::Format {
                    offset: 0,
                    msg: format!("checkpoint lacks {name}"),
                })
        };
        let usizes = |v: Vec<f32>| v.into_iter().map(|x| x as usize).collect::<Vec<_>>();
        let flags = meta(META[5])?;
        let config = ModelConfig {
            num_classes: meta(META[0])?[0] as usize,
            widths_2d: usizes(meta(META[1])?),
            widths_3d: usizes(meta(META[2])?),
            voxel_size: meta(META[3])?[0],
            depth_scale: meta(META[4])?[0],
            depth_input: flags.first() == Some(&1.0),
            fusion_head: flags.get(1) == Some(&1.0),
        };
        let mut model = Model::new(config, 0)?;
        let mut params = ParamStore::new();
        for e in model.params.entries() {
            let got = all.get(&e.name).ok_or_else(|| Error::Format {
                offset: 0,
                msg: format!("checkpoint lacks parameter {}", e.name),
            })?;
            if got.shape != e.shape {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("{}: shape {:?}, architecture needs {:?}", e.name, got.shape, e.shape),
                });
            }
            params.insert(e.name.clone(), &e.shape, got.data.to_vec())?;
        }
        let extra = all.len() - META.len() - params.len();
        if extra != 0 {
            return Err(Error::Format {
                offset: 0,
                msg: format!("checkpoint has {extra} unknown tensors"),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::codec::Writer { buf: self.to_bytes()? }.write_to(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&crate::codec::read_file(path.as_ref())?)
    }
}

/// Mean of two per-point probability tables.
pub fn fuse<T: Elem>(p2d: &Tensor<T>, p3d: &Tensor<T>) -> Result<Tensor<T>> {
    if p2d.rank() != 2 || p2d.shape() != p3d.shape() {
        return Err(Error::dim(format!(
            "fuse: shapes {:?} and {:?}",
            p2d.shape(),
            p3d.shape()
        )));
    }
    let c = p2d.shape()[1].max(1);
    let tol = T::lit(1e-4);
    for (which, t) in [("2D", p2d), ("3D", p3d)] {
        for (n, row) in t.data().chunks(c).enumerate() {
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol || row.iter().any(|v| *v < T::zero()) {
                return Err(Error::Contract(format!(
                    "{which} row {n} is not a probability vector (sum {})",
                    s.to_f64().unwrap_or(f64::NAN)
                )));
            }
        }
    }
    Ok(p2d.add(p3d)?.scale(T::lit(0.5)))
}

/// Linear classifier over `[f2d | f3d]`.
pub fn fusion_head<T: Elem>(
    f2d: &Tensor<T>,
    f3d: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if f2d.rank() != 2 || f3d.rank() != 2 || f2d.shape()[0] != f3d.shape()[0] {
        return Err(Error::dim(format!(
            "fusion_head: features {:?} and {:?}",
            f2d.shape(),
            f3d.shape()
        )));
    }
    Tensor::concat(&[f2d.clone(), f3d.clone()], 1)?.linear(weight, Some(bias))
}

#[cfg(test)]
mod tests;
