use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nets::Input;
use crate::scene::Sample;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Horizontal flip and per-channel color jitter of the image.
    TwoD,
    /// Mirror, scale and yaw of the point positions.
    ThreeD,
}

/// Concrete 2D augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aug2d {
    pub flip: bool,
    /// Per-channel multiplier in [0.8, 1.25].
    pub jitter: [f32; 3],
}

impl Aug2d {
    pub const IDENTITY: Aug2d = Aug2d {
        flip: false,
        jitter: [1.0; 3],
    };

    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let flip = rng.random_bool(0.5);
        let mut jitter = [1.0; 3];
        for j in &mut jitter {
            // log-uniform so that 0.8 and 1.25 are symmetric
            *j = rng.random_range(0.8f32.ln()..=1.25f32.ln()).exp();
        }
        Self { flip, jitter }
    }
}

/// Concrete 3D augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aug3d {
    /// Mirror across the vertical plane `x = 0`.
    pub flip: bool,
    pub scale: f32,
    /// Rotation about the camera-frame vertical (y) axis, radians.
    pub yaw: f32,
}

impl Aug3d {
    pub const IDENTITY: Aug3d = Aug3d {
        flip: false,
        scale: 1.0,
        yaw: 0.0,
    };

    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let flip = rng.random_bool(0.5);
        let scale = rng.random_range(0.95..=1.05);
        let yaw = rng.random_range(-10.0f32..=10.0).to_radians();
        Self { flip, scale, yaw }
    }

    pub fn apply(&self, p: [f32; 3]) -> [f32; 3] {
        let x = if self.flip { -p[0] } else { p[0] };
        let (s, c) = (self.yaw as f64).sin_cos();
        let (x, y, z) = (x as f64, p[1] as f64, p[2] as f64);
        let k = self.scale as f64;
        [
            (k * (c * x + s * z)) as f32,
            (k * y) as f32,
            (k * (-s * x + c * z)) as f32,
        ]
    }
}

fn flip_image(image: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for row in src.chunks(w) {
        out.extend(row.iter().rev());
    }
    Tensor::new(&[c, h, w], out).expect("same shape")
}

fn jitter_image(image: &Tensor<f32>, jitter: [f32; 3]) -> Tensor<f32> {
    let plane = image.shape()[1] * image.shape()[2];
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (v * jitter[(i / plane).min(2)]).clamp(0.0, 1.0))
        .collect();
    Tensor::new(image.shape(), data).expect("same shape")
}

/// Applies 2D parameters to a sample: image flip (column `u → W−1−u`, with the
/// cloud mirrored and the principal point reflected so projections follow)
/// and color jitter. Labels and point order are untouched.
pub fn apply_2d(sample: &Sample, a: &Aug2d) -> Sample {
    let mut s = sample.clone();
    if a.flip {
        s.image = flip_image(&s.image);
        s.intrinsics = s.intrinsics.flipped();
        s.cloud.positions.iter_mut().for_each(|p| p[0] = -p[0]);
    }
    if a.jitter != [1.0; 3] {
        s.image = jitter_image(&s.image, a.jitter);
    }
    s
}

/// Applies 3D parameters to the point positions only.
pub fn apply_3d(sample: &Sample, a: &Aug3d) -> Sample {
    let mut s = sample.clone();
    s.cloud.positions.iter_mut().for_each(|p| *p = a.apply(*p));
    s
}

/// Randomly augments one modality of a sample; a pure function of the seed.
pub fn augment(sample: &Sample, mode: Mode, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        Mode::TwoD => apply_2d(sample, &Aug2d::draw(&mut rng)),
        Mode::ThreeD => apply_3d(sample, &Aug3d::draw(&mut rng)),
    }
}

/// Network input with independent 2D and 3D augmentations. The 3D branch
/// keeps the colors sampled from the unaugmented image.
pub fn augmented_input(sample: &Sample, seed: u64) -> Result<Input> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a2 = Aug2d::draw(&mut rng);
    let a3 = Aug3d::draw(&mut rng);
    let s2 = apply_2d(sample, &a2);
    let mut input = Input::from_sample(&s2)?;
    input.points_3d = sample.cloud.positions.iter().map(|p| a3.apply(*p)).collect();
    input.colors = sample.colors().to_vec();
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::scene::{generate, SceneSpec};

    fn sample() -> Sample {
        let spec = SceneSpec {
            width: 32,
            height: 24,
            lidar_lines: 16,
            azimuth_steps: 24,
            ..SceneSpec::day(5)
        };
        generate(&spec, 1).unwrap().samples.remove(0)
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample();
        let a = Aug2d {
            flip: true,
            jitter: [1.0; 3],
        };
        let twice = apply_2d(&apply_2d(&s, &a), &a);
        assert_eq!(twice, s);
    }

    #[test]
    fn flip_moves_projections_to_mirrored_columns() {
        let s = sample();
        let a = Aug2d {
            flip: true,
            jitter: [1.0; 3],
        };
        let f = apply_2d(&s, &a);
        let p0 = project(&s.cloud.positions, &s.intrinsics).unwrap();
        let p1 = project(&f.cloud.positions, &f.intrinsics).unwrap();
        for (a, b) in p0.uv.iter().zip(&p1.uv) {
            assert!((b[0] - (31.0 - a[0])).abs() < 1e-3);
            assert!((b[1] - a[1]).abs() < 1e-6);
        }
        // colors stay attached: pixel under each point is unchanged
        let plane = 32 * 24;
        for (pa, pb) in p0.pixel.iter().zip(&p1.pixel) {
            let ((ra, ca), (rb, cb)) = (pa.unwrap(), pb.unwrap());
            assert_eq!(ra, rb);
            assert_eq!(cb, 31 - ca);
            for k in 0..3 {
                assert_eq!(s.image.data()[k * plane + ra * 32 + ca], f.image.data()[k * plane + rb * 32 + cb]);
            }
        }
    }

    #[test]
    fn identity_3d_and_label_preservation() {
        let s = sample();
        assert_eq!(apply_3d(&s, &Aug3d::IDENTITY), s);
        for seed in 0..5 {
            for mode in [Mode::TwoD, Mode::ThreeD] {
                let a = augment(&s, mode, seed);
                assert_eq!(a.cloud.labels, s.cloud.labels);
            }
        }
    }

    #[test]
    fn jitter_stays_in_range_and_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = Aug2d::draw(&mut rng);
            assert!(a.jitter.iter().all(|j| (0.8..=1.25).contains(j)));
            let a3 = Aug3d::draw(&mut rng);
            assert!((0.95..=1.05).contains(&a3.scale));
            assert!(a3.yaw.abs() <= 10f32.to_radians() + 1e-6);
        }
        let s = sample();
        let j = apply_2d(&s, &Aug2d { flip: false, jitter: [1.25; 3] });
        assert!(j.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rotation_preserves_norm_up_to_scale() {
        let a = Aug3d {
            flip: true,
            scale: 1.02,
            yaw: 0.1,
        };
        let p = [1.0f32, -0.5, 7.0];
        let q = a.apply(p);
        let n = |v: [f32; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((n(q) - 1.02 * n(p)).abs() < 1e-5);
        assert_eq!(q[1], -0.5 * 1.02);
    }
}
