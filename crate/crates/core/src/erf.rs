//! Effective receptive fields of both branches at one anchor point.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{project, Intrinsics};
use crate::nets::{Batch, Input, Inputs, Model};
use crate::scene::Sample;
use crate::sparse::Voxelization;
use crate::train::argmax;

/// Radii (meters) of the locality curve; those below the scene diameter are
/// used and the diameter is appended.
pub const LOCALITY_RADII: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalityPoint {
    pub radius: f64,
    pub fraction_2d: f64,
    pub fraction_3d: f64,
}

/// Normalized gradient mass of both branches for one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfResult {
    pub anchor: usize,
    pub positions: Vec<[f32; 3]>,
    pub height: usize,
    pub width: usize,
    /// Per point; mass of a voxel is credited to its representative point.
    pub mass_3d: Vec<f32>,
    /// Per pixel, row-major `H·W`.
    pub mass_2d: Vec<f32>,
    /// `mass_2d` moved to the point whose projection is nearest each pixel.
    pub mass_2d_points: Vec<f32>,
    pub locality: Vec<LocalityPoint>,
}

fn normalize(v: &mut [f32]) {
    let total: f64 = v.iter().map(|&x| x as f64).sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / total) as f32);
    }
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f64 {
    (0..3).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum::<f64>().sqrt()
}

impl ErfResult {
    /// Builds a result from raw input gradients.
    ///
    /// `image_grad` is `[3, H, W]` and `voxel_grad` is `[V, C]` over the voxels
    /// of `vox`, which must voxelize exactly `positions`.
    pub fn from_gradients(
        anchor: usize,
        positions: &[[f32; 3]],
        k: &Intrinsics,
        image_grad: &[f32],
        voxel_grad: &[f32],
        vox: &Voxelization,
    ) -> Result<Self> {
        let n = positions.len();
        let (h, w) = (k.height, k.width);
        if anchor >= n {
            return Err(Error::usage(format!("anchor {anchor} out of range for {n} points")));
        }
        if image_grad.len() != 3 * h * w || vox.point_to_voxel.len() != n {
            return Err(Error::dim("gradient sizes do not match the sample"));
        }
        let v = vox.winner.len();
        if v == 0 || voxel_grad.len() % v != 0 {
            return Err(Error::dim(format!("voxel gradient of {} values for {v} voxels", voxel_grad.len())));
        }
        let proj = project(positions, k)?;
        if proj.pixel[anchor].is_none() {
            return Err(Error::Domain(format!("anchor {anchor} projects outside the image")));
        }

        let ch = voxel_grad.len() / v;
        let mut mass_3d = vec![0.0f32; n];
        for (row, &p) in vox.winner.iter().enumerate() {
            mass_3d[p] += voxel_grad[row * ch..(row + 1) * ch].iter().map(|g| g.abs()).sum::<f32>();
        }
        normalize(&mut mass_3d);

        let plane = h * w;
        let mut mass_2d: Vec<f32> = (0..plane)
            .map(|i| (0..3).map(|c| image_grad[c * plane + i].abs()).sum())
            .collect();
        normalize(&mut mass_2d);

        let mut mass_2d_points = vec![0.0f32; n];
        for (i, &m) in mass_2d.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (r, c) = ((i / w) as f32, (i % w) as f32);
            let key = |j: usize| {
                let [u, vv] = proj.uv[j];
                ((u - c).powi(2) + (vv - r).powi(2), positions[j][2])
            };
            let best = (0..n)
                .min_by(|&a, &b| {
                    let (ka, kb) = (key(a), key(b));
                    ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
                })
                .expect("non-empty cloud");
            mass_2d_points[best] += m;
        }

        let mut res = Self {
            anchor,
            positions: positions.to_vec(),
            height: h,
            width: w,
            mass_3d,
            mass_2d,
            mass_2d_points,
            locality: Vec::new(),
        };
        let diameter = positions
            .iter()
            .map(|&p| dist(p, positions[anchor]))
            .fold(0.0, f64::max);
        let mut radii: Vec<f64> = LOCALITY_RADII.into_iter().filter(|&r| r < diameter).collect();
        radii.push(diameter);
        res.locality = radii
            .into_iter()
            .map(|r| {
                let (f2, f3) = res.locality_at(r);
                LocalityPoint {
                    radius: r,
                    fraction_2d: f2,
                    fraction_3d: f3,
                }
            })
            .collect();
        Ok(res)
    }

    /// `(2D, 3D)` fraction of point mass within `radius` meters of the anchor.
    pub fn locality_at(&self, radius: f64) -> (f64, f64) {
        let a = self.positions[self.anchor];
        let mut f = (0.0, 0.0);
        for (i, &p) in self.positions.iter().enumerate() {
            if dist(p, a) <= radius {
                f.0 += self.mass_2d_points[i] as f64;
                f.1 += self.mass_3d[i] as f64;
            }
        }
        (f.0.min(1.0), f.1.min(1.0))
    }
}

/// ERF of the trained (or fresh) model at point `point` of `sample`.
///
/// The seed is the anchor's main logit for the class each branch predicts.
pub fn compute_erf(model: &Model, sample: &Sample, point: usize) -> Result<ErfResult> {
    let n = sample.num_points();
    if point >= n {
        return Err(Error::usage(format!("point {point} out of range for {n} points")));
    }
    let k = &sample.intrinsics;
    let anchor = sample.cloud.positions[point];
    let [u, v] = k.project_point([anchor[0] as f64, anchor[1] as f64, anchor[2] as f64]);
    let (col, row) = ((u + 0.5).floor(), (v + 0.5).floor());
    if !(anchor[2] > 0.0 && col >= 0.0 && row >= 0.0 && col < k.width as f64 && row < k.height as f64) {
        return Err(Error::Domain(format!("point {point} at {anchor:?} is outside the camera frustum")));
    }
    let batch = Batch::new(&[Input::from_sample(sample)?], &model.config)?;
    let params = model.params.constants();
    let inputs = Inputs {
        image: batch.images.clone().requires_grad(),
        depth: batch.depth.clone(),
        colors: batch.colors.clone().requires_grad(),
    };
    let out = model.forward_with(&params, &batch, inputs)?;
    let c = model.config.num_classes;
    let row_of = |t: &crate::Tensor<f32>| argmax(&t.data()[point * c..(point + 1) * c]);
    let (c2, c3) = (row_of(&out.out2d.main_logits), row_of(&out.out3d.main_logits));
    let seed = out.out2d.main_logits.pick(&[(point, c2)])?.sum().add(&out.out3d.main_logits.pick(&[(point, c3)])?.sum())?;
    seed.backward()?;
    let image_grad = out.image.grad().unwrap_or_else(|| vec![0.0; out.image.len()]);
    let voxel_grad = out.voxel_input.grad().unwrap_or_else(|| vec![0.0; out.voxel_input.len()]);
    ErfResult::from_gradients(
        point,
        &sample.cloud.positions,
        k,
        &image_grad,
        &voxel_grad,
        &batch.geometry.voxelization,
    )
}

/// Paths written by [`export_erf`].
#[derive(Clone, Debug)]
pub struct ErfFiles {
    pub ply: PathBuf,
    pub heatmap: PathBuf,
    pub locality: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::codec::Writer {
        buf: text.as_bytes().to_vec(),
    }
    .write_to(path)
}

/// Writes `erf.ply` (x, y, z, erf2d, erf3d), `erf2d.ppm` (heatmap of the
/// 2D mass) and `locality.tsv` into `dir`.
pub fn export_erf(result: &ErfResult, dir: impl AsRef<Path>) -> Result<ErfFiles> {
    let dir = dir.as_ref();
    let files = ErfFiles {
        ply: dir.join("erf.ply"),
        heatmap: dir.join("erf2d.ppm"),
        locality: dir.join("locality.tsv"),
    };

    let mut ply = String::new();
    let n = result.positions.len();
    let _ = write!(
        ply,
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\n\
         property float erf2d\nproperty float erf3d\nend_header\n"
    );
    for (i, p) in result.positions.iter().enumerate() {
        let _ = writeln!(
            ply,
            "{} {} {} {} {}",
            p[0], p[1], p[2], result.mass_2d_points[i], result.mass_3d[i]
        );
    }
    write_text(&files.ply, &ply)?;

    let peak = result.mass_2d.iter().copied().fold(0.0f32, f32::max);
    let mut ppm = format!("P6\n{} {}\n255\n", result.width, result.height).into_bytes();
    for &m in &result.mass_2d {
        let t = if peak > 0.0 { m / peak } else { 0.0 };
        let ch = |x: f32| ((3.0 * t - x).clamp(0.0, 1.0) * 255.0).round() as u8;
        ppm.extend_from_slice(&[ch(0.0), ch(1.0), ch(2.0)]);
    }
    crate::codec::Writer { buf: ppm }.write_to(&files.heatmap)?;

    let mut tsv = String::from("radius_m\tfraction_2d\tfraction_3d\n");
    for l in &result.locality {
        let _ = writeln!(tsv, "{:.4}\t{:.6}\t{:.6}", l.radius, l.fraction_2d, l.fraction_3d);
    }
    write_text(&files.locality, &tsv)?;
    Ok(files)
}
