//! Pinhole camera model and 2D↔3D correspondence machinery.
//!
//! Points live in the camera frame (x right, y down, z forward). Pixel
//! coordinates are rounded half-up (`floor(u + 0.5)`) in every operation, and
//! a pixel hit by several points keeps the nearest one (smallest z, then
//! lowest point index).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Label value of unsupervised points and pixels.
pub const IGNORE_LABEL: i32 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f32, fy: f32, cx: f32, cy: f32, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the given horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f32) -> Result<Self> {
        let f = width as f32 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f32 / 2.0, height as f32 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f32
            && self.cy >= 0.0
            && self.cy < self.height as f32;
        if !ok {
            return Err(Error::Domain(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Camera-frame point on the ray through pixel `(u, v)` at depth `z`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [
            (u - self.cx as f64) * z / self.fx as f64,
            (v - self.cy as f64) * z / self.fy as f64,
            z,
        ]
    }

    /// `(u, v)` of a camera-frame point, in double precision.
    pub fn project_point(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.fx as f64 * p[0] / p[2] + self.cx as f64,
            self.fy as f64 * p[1] / p[2] + self.cy as f64,
        ]
    }

    /// Horizontally mirrored camera: `u → width − 1 − u`.
    pub fn flipped(&self) -> Self {
        Self {
            cx: self.width as f32 - 1.0 - self.cx,
            ..*self
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    /// Per-point RGB in [0, 1].
    pub colors: Option<Vec<[f32; 3]>>,
    /// Per-point class, [`IGNORE_LABEL`] for unlabeled points.
    pub labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>) -> Self {
        Self {
            positions,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions_tensor(&self) -> Tensor<f32> {
        let flat = self.positions.iter().flatten().copied().collect();
        Tensor::new(&[self.len(), 3], flat).expect("N×3 layout")
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if let Some(p) = self.positions.iter().find(|p| !(p[2] > 0.0)) {
            return Err(Error::Domain(format!("point {p:?} is not in front of the camera")));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.len() {
                return Err(Error::dim("colors do not match point count"));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.len() {
                return Err(Error::dim("labels do not match point count"));
            }
            if let Some(bad) = l.iter().find(|&&v| v < IGNORE_LABEL || v >= num_classes as i32) {
                return Err(Error::Domain(format!("label {bad} outside 0..{num_classes}")));
            }
        }
        Ok(())
    }
}

/// Per-point projection result.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Real-valued `(u, v)` image coordinates.
    pub uv: Vec<[f32; 2]>,
    /// Rounded `(row, col)` pixel, `None` when outside the image.
    pub pixel: Vec<Option<(usize, usize)>>,
}

impl Projection {
    pub fn in_bounds(&self) -> Vec<bool> {
        self.pixel.iter().map(Option::is_some).collect()
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Pinhole projection `u = fx·x/z + cx`, `v = fy·y/z + cy`.
pub fn project(positions: &[[f32; 3]], k: &Intrinsics) -> Result<Projection> {
    let mut uv = Vec::with_capacity(positions.len());
    let mut pixel = Vec::with_capacity(positions.len());
    for p in positions {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        if !(z > 0.0) {
            return Err(Error::Domain(format!(
                "point {p:?} has z <= 0 and is not visible from the camera"
            )));
        }
        let [u, v] = k.project_point([x, y, z]);
        uv.push([u as f32, v as f32]);
        let (col, row) = (round_half_up(u), round_half_up(v));
        let inside = col >= 0.0 && col < k.width as f64 && row >= 0.0 && row < k.height as f64;
        pixel.push(inside.then_some((row as usize, col as usize)));
    }
    Ok(Projection { uv, pixel })
}

/// For every pixel, the index of the point that owns it under the nearest-z
/// rule (ties to the lowest index).
pub fn zbuffer(positions: &[[f32; 3]], k: &Intrinsics) -> Result<Vec<Option<usize>>> {
    let proj = project(positions, k)?;
    let mut owner: Vec<Option<usize>> = vec![None; k.width * k.height];
    for (i, px) in proj.pixel.iter().enumerate() {
        let Some((r, c)) = *px else { continue };
        let slot = &mut owner[r * k.width + c];
        match *slot {
            Some(j) if positions[j][2] <= positions[i][2] => {}
            _ => *slot = Some(i),
        }
    }
    Ok(owner)
}

/// Sparse depth map `[1, H, W]` in meters, 0 where no point lands.
pub fn make_sparse_depth(positions: &[[f32; 3]], k: &Intrinsics) -> Result<Tensor<f32>> {
    let owner = zbuffer(positions, k)?;
    let data = owner
        .iter()
        .map(|o| o.map_or(0.0, |i| positions[i][2]))
        .collect();
    Tensor::new(&[1, k.height, k.width], data)
}

/// Projected label map (`H·W`, row-major), [`IGNORE_LABEL`] where no point lands.
pub fn project_labels(cloud: &PointCloud, k: &Intrinsics) -> Result<Vec<i32>> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::usage("project_labels needs a labeled point cloud"))?;
    let owner = zbuffer(&cloud.positions, k)?;
    Ok(owner
        .iter()
        .map(|o| o.map_or(IGNORE_LABEL, |i| labels[i]))
        .collect())
}

/// Nearest-pixel color lookup in a `[3, H, W]` image. Points outside the
/// image get black and a `false` flag.
pub fn sample_colors(
    image: &Tensor<f32>,
    positions: &[[f32; 3]],
    k: &Intrinsics,
) -> Result<(Vec<[f32; 3]>, Vec<bool>)> {
    if image.shape() != [3, k.height, k.width] {
        return Err(Error::dim(format!(
            "image {:?} does not match a {}x{} camera",
            image.shape(),
            k.height,
            k.width
        )));
    }
    let proj = project(positions, k)?;
    let plane = k.width * k.height;
    let img = image.data();
    let mut colors = Vec::with_capacity(positions.len());
    let mut flags = Vec::with_capacity(positions.len());
    for px in &proj.pixel {
        match *px {
            Some((r, c)) => {
                let at = r * k.width + c;
                colors.push([img[at], img[plane + at], img[2 * plane + at]]);
                flags.push(true);
            }
            None => {
                colors.push([0.0; 3]);
                flags.push(false);
            }
        }
    }
    Ok((colors, flags))
}

/// Rounded `(row, col)` of every point; fails if any point leaves the image.
pub fn pixel_locations(positions: &[[f32; 3]], k: &Intrinsics) -> Result<Vec<(usize, usize)>> {
    let proj = project(positions, k)?;
    proj.pixel
        .iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::Domain(format!("point {i} projects outside the image"))))
        .collect()
}

/// Nearest-pixel gather of `feature_map: [C, H, W]` (or `[1, C, H, W]`) at the
/// projected points, `[N, C]`. Gradients scatter back to the touched pixels.
pub fn gather_point_features<T: Elem>(
    feature_map: &Tensor<T>,
    positions: &[[f32; 3]],
    k: &Intrinsics,
) -> Result<Tensor<T>> {
    let map = match feature_map.rank() {
        3 => feature_map.reshape(&[1, feature_map.shape()[0], feature_map.shape()[1], feature_map.shape()[2]])?,
        4 if feature_map.shape()[0] == 1 => feature_map.clone(),
        _ => return Err(Error::dim("feature map must be [C, H, W] or [1, C, H, W]")),
    };
    if map.shape()[2] != k.height || map.shape()[3] != k.width {
        return Err(Error::dim(format!(
            "feature map {:?} does not match a {}x{} camera",
            feature_map.shape(),
            k.height,
            k.width
        )));
    }
    let locs: Vec<(usize, usize, usize)> = pixel_locations(positions, k)?
        .into_iter()
        .map(|(r, c)| (0, r, c))
        .collect();
    map.gather_pixels(&locs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn principal_ray_and_offset_point() {
        let p = project(&[[0.0, 0.0, 5.0], [1.0, 0.0, 5.0]], &cam()).unwrap();
        assert_eq!(p.uv[0], [50.0, 50.0]);
        assert!((p.uv[1][0] - 70.0).abs() < 1e-6);
        assert_eq!(p.uv[1][1], 50.0);
        assert_eq!(p.pixel[1], Some((50, 70)));
    }

    #[test]
    fn out_of_frustum_is_masked() {
        let p = project(&[[10.0, 0.0, 1.0]], &cam()).unwrap();
        assert_eq!(p.in_bounds(), vec![false]);
    }

    #[test]
    fn non_positive_depth_rejected() {
        assert!(matches!(project(&[[0.0, 0.0, 0.0]], &cam()), Err(Error::Domain(_))));
        assert!(matches!(project(&[[0.0, 0.0, -1.0]], &cam()), Err(Error::Domain(_))));
    }

    #[test]
    fn round_half_up_convention() {
        // u = 100·0.045/1 + 50 = 54.5 → 55
        let p = project(&[[0.045, -0.005, 1.0]], &cam()).unwrap();
        assert_eq!(p.pixel[0], Some((50, 55)));
    }

    #[test]
    fn single_point_depth_map() {
        let d = make_sparse_depth(&[[0.0, 0.0, 5.0]], &cam()).unwrap();
        assert_eq!(d.shape(), &[1, 100, 100]);
        for (i, v) in d.data().iter().enumerate() {
            if i == 50 * 100 + 50 {
                assert_eq!(*v, 5.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn empty_in_bounds_set_gives_zero_map() {
        let d = make_sparse_depth(&[[100.0, 0.0, 1.0]], &cam()).unwrap();
        assert!(d.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn labels_follow_depth_winner() {
        let cloud = PointCloud {
            positions: vec![[0.0, 0.0, 7.0], [0.0, 0.0, 3.0]],
            colors: None,
            labels: Some(vec![4, 1]),
        };
        let labels = project_labels(&cloud, &cam()).unwrap();
        assert_eq!(labels[50 * 100 + 50], 1);
        assert_eq!(labels.iter().filter(|&&l| l != IGNORE_LABEL).count(), 1);
        let d = make_sparse_depth(&cloud.positions, &cam()).unwrap();
        assert_eq!(d.data()[50 * 100 + 50], 3.0);
    }

    #[test]
    fn ignored_winner_propagates() {
        let cloud = PointCloud {
            positions: vec![[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]],
            colors: None,
            labels: Some(vec![IGNORE_LABEL, 2]),
        };
        assert_eq!(project_labels(&cloud, &cam()).unwrap()[50 * 100 + 50], IGNORE_LABEL);
    }

    #[test]
    fn missing_labels_is_usage_error() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 1.0]]);
        assert!(matches!(project_labels(&cloud, &cam()), Err(Error::Usage(_))));
    }

    #[test]
    fn sample_constant_and_painted_image() {
        let k = Intrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
        let gray = Tensor::full(&[3, 10, 10], 0.5);
        let (c, f) = sample_colors(&gray, &[[0.0, 0.0, 1.0], [0.1, 0.2, 2.0], [50.0, 0.0, 1.0]], &k).unwrap();
        assert_eq!(c[0], [0.5; 3]);
        assert_eq!(c[1], [0.5; 3]);
        assert_eq!(c[2], [0.0; 3]);
        assert_eq!(f, vec![true, true, false]);

        let mut data = vec![0.0; 300];
        data[5 * 10 + 5] = 1.0;
        let red = Tensor::new(&[3, 10, 10], data).unwrap();
        let (c, _) = sample_colors(&red, &[[0.0, 0.0, 1.0]], &k).unwrap();
        assert_eq!(c[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn back_projection_round_trip() {
        let k = Intrinsics::new(120.0, 90.0, 31.5, 20.25, 64, 48).unwrap();
        for r in 0..48 {
            for c in 0..64 {
                let p = k.back_project(c as f64, r as f64, 3.7);
                let [u, v] = k.project_point(p);
                assert!((u - c as f64).abs() < 1e-6);
                assert!((v - r as f64).abs() < 1e-6);
            }
        }
    }
}
