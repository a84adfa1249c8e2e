//! Procedural paired RGB + lidar scenes with controllable domain shifts.
//!
//! A scene is a ground plane plus boxes (buildings, vehicles) and trees
//! (column trunk + sphere crown). The camera sits at the origin looking down
//! +z with y pointing at the ground. The image is Lambertian-shaded under one
//! directional light; the lidar shares the camera center, fires one line per
//! evenly spaced image-row band, and its returns lie on pixel-center rays.

mod io;
mod raycast;

pub use io::{decode, encode, load, save, DATASET_MAGIC, DATASET_VERSION};
pub use raycast::{Hit, Shape, Solid, World, BUILDING, CLASS_NAMES, GROUND, VEGETATION, VEHICLE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_colors, Intrinsics, PointCloud};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Source,
    Target,
}

/// Count and characteristic-size range of one object family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectPrior {
    pub count: [u32; 2],
    pub size: [f32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f32,
    pub camera_height: f32,
    pub buildings: ObjectPrior,
    pub vehicles: ObjectPrior,
    pub trees: ObjectPrior,
    /// Multiplier on object counts.
    pub density: f32,
    /// Multiplier on object sizes.
    pub size_scale: f32,
    /// Global light intensity in (0, 1].
    pub brightness: f32,
    /// −1 (blue) … +1 (warm) channel re-weighting.
    pub color_temperature: f32,
    /// Standard deviation of additive per-channel pixel noise.
    pub pixel_noise: f32,
    pub lidar_lines: u32,
    pub azimuth_steps: u32,
    /// Standard deviation of lidar range noise in meters.
    pub range_noise: f32,
    pub max_range: f32,
    /// Place a vehicle in front of a building straight ahead of the camera.
    pub occlusion: bool,
    pub domain: Domain,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            hfov_deg: 70.0,
            camera_height: 1.6,
            buildings: ObjectPrior {
                count: [1, 3],
                size: [4.0, 9.0],
            },
            vehicles: ObjectPrior {
                count: [1, 4],
                size: [3.6, 4.8],
            },
            trees: ObjectPrior {
                count: [1, 4],
                size: [1.0, 2.2],
            },
            density: 1.0,
            size_scale: 1.0,
            brightness: 1.0,
            color_temperature: 0.0,
            pixel_noise: 0.01,
            lidar_lines: 64,
            azimuth_steps: 64,
            range_noise: 0.02,
            max_range: 40.0,
            occlusion: false,
            domain: Domain::Source,
        }
    }
}

impl SceneSpec {
    /// Daylight source domain.
    pub fn day(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Night target domain: dim, blue-shifted and noisy images, same layouts.
    pub fn night(seed: u64) -> Self {
        Self {
            seed,
            brightness: 0.15,
            color_temperature: -1.0,
            pixel_noise: 0.03,
            domain: Domain::Target,
            ..Self::default()
        }
    }

    pub fn occlusion(seed: u64) -> Self {
        Self {
            seed,
            occlusion: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(8..=1024).contains(&self.width) || !(8..=1024).contains(&self.height) {
            return bad(format!("image size {}x{} outside 8..=1024", self.width, self.height));
        }
        if !(10.0..=150.0).contains(&self.hfov_deg) {
            return bad(format!("hfov {} outside [10, 150] degrees", self.hfov_deg));
        }
        if !(self.camera_height > 0.2 && self.camera_height < 10.0) {
            return bad(format!("camera height {} outside (0.2, 10)", self.camera_height));
        }
        for (name, p) in [("buildings", self.buildings), ("vehicles", self.vehicles), ("trees", self.trees)] {
            if p.count[0] > p.count[1] || p.count[1] > 64 {
                return bad(format!("{name} count range {:?} invalid", p.count));
            }
            if !(p.size[0] > 0.0 && p.size[0] <= p.size[1] && p.size[1] < 50.0) {
                return bad(format!("{name} size range {:?} invalid", p.size));
            }
        }
        if !(0.0..=4.0).contains(&self.density) {
            return bad(format!("density {} outside [0, 4]", self.density));
        }
        if !(self.size_scale > 0.2 && self.size_scale <= 3.0) {
            return bad(format!("size scale {} outside (0.2, 3]", self.size_scale));
        }
        if !(self.brightness > 0.0 && self.brightness <= 1.0) {
            return bad(format!("brightness {} outside (0, 1]", self.brightness));
        }
        if !(-1.0..=1.0).contains(&self.color_temperature) {
            return bad(format!("color temperature {} outside [-1, 1]", self.color_temperature));
        }
        if !(0.0..=0.5).contains(&self.pixel_noise) || !(0.0..=1.0).contains(&self.range_noise) {
            return bad("noise levels out of range".into());
        }
        if self.lidar_lines == 0 || self.lidar_lines as usize > self.height {
            return bad(format!("lidar lines {} outside 1..={}", self.lidar_lines, self.height));
        }
        if self.azimuth_steps == 0 || self.azimuth_steps as usize > self.width {
            return bad(format!("azimuth steps {} outside 1..={}", self.azimuth_steps, self.width));
        }
        if !(self.max_range > 1.0 && self.max_range <= 200.0) {
            return bad(format!("max range {} outside (1, 200]", self.max_range));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg)
    }
}

/// One scene: RGB image, camera-frame point cloud, intrinsics, domain tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3, H, W]` in [0, 1].
    pub image: Tensor<f32>,
    pub cloud: PointCloud,
    pub intrinsics: Intrinsics,
    pub domain: Domain,
}

impl Sample {
    pub fn labels(&self) -> Option<&[i32]> {
        self.cloud.labels.as_deref()
    }

    pub fn colors(&self) -> &[[f32; 3]] {
        self.cloud.colors.as_deref().unwrap_or(&[])
    }

    pub fn num_points(&self) -> usize {
        self.cloud.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Rendered scene before point sampling; exposes the per-pixel class map.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub sample: Sample,
    /// Class of the first surface along each pixel-center ray (−1 for sky).
    pub class_map: Vec<i32>,
    pub world: World,
}

fn rng_for(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Generates `n` scenes. Pure function of `(spec, n)`; sample `i` of a longer
/// run equals sample `i` of a shorter one.
pub fn generate(spec: &SceneSpec, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::usage("generate needs at least one sample"));
    }
    spec.validate()?;
    let samples = (0..n)
        .map(|i| render_scene(spec, i as u64).map(|r| r.sample))
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

/// Renders scene `index` of `spec` with its class map.
pub fn render_scene(spec: &SceneSpec, index: u64) -> Result<Rendered> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let world = layout(spec, &mut rng_for(spec.seed, index, 0));
    let (image, class_map) = render(spec, &k, &world, &mut rng_for(spec.seed, index, 1));
    let mut cloud = scan(spec, &k, &world, &mut rng_for(spec.seed, index, 2))?;
    let (colors, _) = sample_colors(&image, &cloud.positions, &k)?;
    cloud.colors = Some(colors);
    Ok(Rendered {
        sample: Sample {
            image,
            cloud,
            intrinsics: k,
            domain: spec.domain,
        },
        class_map,
        world,
    })
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    let s = 1.0 + rng.random_range(-amount..=amount);
    base.map(|c| (c * s + rng.random_range(-0.03..=0.03)).clamp(0.02, 1.0))
}

fn count(rng: &mut ChaCha8Rng, prior: ObjectPrior, density: f32) -> usize {
    let n = rng.random_range(prior.count[0]..=prior.count[1]) as f32 * density;
    n.round() as usize
}

/// Footprint (x, z, radius) of each placed object, used for overlap rejection.
struct Placer {
    taken: Vec<(f64, f64, f64)>,
    tan_half: f64,
}

impl Placer {
    fn place(&mut self, rng: &mut ChaCha8Rng, z_range: (f64, f64), radius: f64) -> Option<(f64, f64)> {
        for _ in 0..40 {
            let z = rng.random_range(z_range.0..z_range.1);
            let half = z * self.tan_half;
            let x = rng.random_range(-half..half);
            let free = self
                .taken
                .iter()
                .all(|&(tx, tz, tr)| ((tx - x).powi(2) + (tz - z).powi(2)).sqrt() > tr + radius + 0.3);
            if free {
                self.taken.push((x, z, radius));
                return Some((x, z));
            }
        }
        None
    }
}

const BUILDING_PALETTE: [[f32; 3]; 4] = [[0.62, 0.60, 0.56], [0.70, 0.52, 0.40], [0.55, 0.58, 0.66], [0.80, 0.76, 0.66]];
const VEHICLE_PALETTE: [[f32; 3]; 5] = [[0.80, 0.12, 0.10], [0.12, 0.22, 0.70], [0.90, 0.90, 0.88], [0.15, 0.15, 0.17], [0.85, 0.70, 0.10]];
const TREE_CROWN: [f32; 3] = [0.20, 0.52, 0.18];
const TREE_TRUNK: [f32; 3] = [0.40, 0.28, 0.16];

fn add_building(world: &mut World, rng: &mut ChaCha8Rng, x: f64, z: f64, w: f64, d: f64, h: f64) {
    let g = world.ground_y;
    let base = BUILDING_PALETTE[rng.random_range(0..BUILDING_PALETTE.len())];
    world.solids.push(Solid {
        shape: Shape::Cuboid {
            min: [x - w / 2.0, g - h, z],
            max: [x + w / 2.0, g, z + d],
        },
        class: BUILDING,
        albedo: jitter(rng, base, 0.1),
    });
}

fn add_vehicle(world: &mut World, rng: &mut ChaCha8Rng, x: f64, z: f64, length: f64, along_z: bool) {
    let g = world.ground_y;
    let width = rng.random_range(1.7..2.0) * length / 4.2;
    let height = rng.random_range(1.35..1.7) * length / 4.2;
    let base = VEHICLE_PALETTE[rng.random_range(0..VEHICLE_PALETTE.len())];
    let (sx, sz) = if along_z { (width, length) } else { (length, width) };
    world.solids.push(Solid {
        shape: Shape::Cuboid {
            min: [x - sx / 2.0, g - height, z - sz / 2.0],
            max: [x + sx / 2.0, g - 0.05, z + sz / 2.0],
        },
        class: VEHICLE,
        albedo: jitter(rng, base, 0.15),
    });
}

fn add_tree(world: &mut World, rng: &mut ChaCha8Rng, x: f64, z: f64, crown: f64) {
    let g = world.ground_y;
    let trunk_h = rng.random_range(1.2..2.4);
    world.solids.push(Solid {
        shape: Shape::Column {
            x,
            z,
            radius: rng.random_range(0.15..0.3),
            y0: g - trunk_h - crown * 0.5,
            y1: g,
        },
        class: VEGETATION,
        albedo: jitter(rng, TREE_TRUNK, 0.1),
    });
    world.solids.push(Solid {
        shape: Shape::Sphere {
            center: [x, g - trunk_h - crown * 0.8, z],
            radius: crown,
        },
        class: VEGETATION,
        albedo: jitter(rng, TREE_CROWN, 0.15),
    });
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> World {
    let ground = [0.34f32, 0.33, 0.31];
    let mut world = World {
        ground_y: spec.camera_height as f64,
        ground_albedo: jitter(rng, ground, 0.2),
        solids: Vec::new(),
    };
    let s = spec.size_scale as f64;
    let tan_half = ((spec.hfov_deg as f64).to_radians() * 0.5).tan() * 1.1;
    let mut placer = Placer {
        taken: Vec::new(),
        tan_half,
    };

    if spec.occlusion {
        let vx = rng.random_range(-1.0..1.0);
        let vz = rng.random_range(6.0..9.0);
        let len = rng.random_range(3.8..4.6) * s;
        add_vehicle(&mut world, rng, vx, vz, len, false);
        placer.taken.push((vx, vz, len / 2.0));
        let bz = vz + rng.random_range(7.0..11.0);
        let bw = rng.random_range(10.0..16.0) * s;
        let bh = rng.random_range(6.0..12.0) * s;
        let bx = vx + rng.random_range(-2.0..2.0);
        add_building(&mut world, rng, bx, bz, bw, 6.0 * s, bh);
        placer.taken.push((vx, bz + 3.0 * s, bw / 2.0));
    }

    let p = spec.buildings;
    for _ in 0..count(rng, p, spec.density) {
        let w = rng.random_range(p.size[0]..=p.size[1]) as f64 * s;
        let d = rng.random_range(p.size[0]..=p.size[1]) as f64 * s;
        let h = rng.random_range(4.0..12.0) * s;
        if let Some((x, z)) = placer.place(rng, (12.0, 34.0), w.max(d) * 0.6) {
            add_building(&mut world, rng, x, z, w, d, h);
        }
    }
    let p = spec.vehicles;
    for _ in 0..count(rng, p, spec.density) {
        let len = rng.random_range(p.size[0]..=p.size[1]) as f64 * s;
        let along_z = rng.random_bool(0.5);
        if let Some((x, z)) = placer.place(rng, (4.5, 22.0), len / 2.0) {
            add_vehicle(&mut world, rng, x, z, len, along_z);
        }
    }
    let p = spec.trees;
    for _ in 0..count(rng, p, spec.density) {
        let crown = rng.random_range(p.size[0]..=p.size[1]) as f64 * s;
        if let Some((x, z)) = placer.place(rng, (5.0, 28.0), crown) {
            add_tree(&mut world, rng, x, z, crown);
        }
    }
    world
}

fn light_dir() -> [f64; 3] {
    // towards the light: above (−y), slightly right and behind the camera
    let l: [f64; 3] = [0.35, -0.85, -0.4];
    let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
    [l[0] / n, l[1] / n, l[2] / n]
}

fn pixel_ray(k: &Intrinsics, row: usize, col: usize) -> [f64; 3] {
    k.back_project(col as f64, row as f64, 1.0)
}

fn render(spec: &SceneSpec, k: &Intrinsics, world: &World, rng: &mut ChaCha8Rng) -> (Tensor<f32>, Vec<i32>) {
    let (w, h) = (k.width, k.height);
    let plane = w * h;
    let mut img = vec![0.0f32; 3 * plane];
    let mut classes = vec![-1; plane];
    let l = light_dir();
    let t = spec.color_temperature;
    let tint = [1.0 + 0.3 * t, 1.0, 1.0 - 0.3 * t];
    let noise = Normal::new(0.0, spec.pixel_noise.max(0.0) as f64).unwrap();
    for r in 0..h {
        for c in 0..w {
            let d = pixel_ray(k, r, c);
            let base = match world.cast([0.0; 3], d) {
                Some(hit) => {
                    classes[r * w + c] = hit.class;
                    let lambert = (hit.normal[0] * l[0] + hit.normal[1] * l[1] + hit.normal[2] * l[2]).max(0.0);
                    let shade = (0.35 + 0.65 * lambert) as f32;
                    hit.albedo.map(|a| a * shade)
                }
                None => {
                    let up = (r as f32 / h as f32).clamp(0.0, 1.0);
                    [0.50 + 0.2 * up, 0.66 + 0.15 * up, 0.88]
                }
            };
            for ch in 0..3 {
                let mut v = base[ch] * spec.brightness * tint[ch];
                if spec.pixel_noise > 0.0 {
                    v += noise.sample(rng) as f32;
                }
                img[ch * plane + r * w + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    (Tensor::new(&[3, h, w], img).expect("3×H×W"), classes)
}

/// Row (or column) indices hit by `n` evenly spaced beams over `len` pixels.
fn beam_positions(n: usize, len: usize) -> Vec<usize> {
    (0..n)
        .map(|i| ((i as f64 + 0.5) * len as f64 / n as f64).floor() as usize)
        .map(|p| p.min(len - 1))
        .collect()
}

fn scan(spec: &SceneSpec, k: &Intrinsics, world: &World, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let noise = Normal::new(0.0, spec.range_noise.max(0.0) as f64).unwrap();
    let rows = beam_positions(spec.lidar_lines as usize, k.height);
    let cols = beam_positions(spec.azimuth_steps as usize, k.width);
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for &r in &rows {
        for &c in &cols {
            let d = pixel_ray(k, r, c);
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let Some(hit) = world.cast([0.0; 3], d) else { continue };
            let range = hit.t * norm;
            if range > spec.max_range as f64 {
                continue;
            }
            let noisy = if spec.range_noise > 0.0 {
                (range + noise.sample(rng)).max(0.1)
            } else {
                range
            };
            let s = noisy / norm;
            positions.push([(d[0] * s) as f32, (d[1] * s) as f32, (d[2] * s) as f32]);
            labels.push(hit.class);
        }
    }
    Ok(PointCloud {
        positions,
        colors: None,
        labels: Some(labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;

    #[test]
    fn beams_cover_distinct_rows() {
        assert_eq!(beam_positions(4, 16), vec![2, 6, 10, 14]);
        let all = beam_positions(64, 64);
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_spec_is_config_error() {
        let spec = SceneSpec {
            brightness: 0.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate(&spec, 1), Err(Error::Config(_))));
        let spec = SceneSpec {
            lidar_lines: 500,
            ..SceneSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic() {
        let a = generate(&SceneSpec::day(5), 2).unwrap();
        let b = generate(&SceneSpec::day(5), 2).unwrap();
        assert_eq!(a, b);
        let c = generate(&SceneSpec::day(6), 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn points_in_frustum_and_labeled() {
        let ds = generate(&SceneSpec::day(1), 3).unwrap();
        for s in &ds.samples {
            assert!(s.num_points() > 500, "{} points", s.num_points());
            s.cloud.validate(NUM_CLASSES).unwrap();
            let p = project(&s.cloud.positions, &s.intrinsics).unwrap();
            assert!(p.pixel.iter().all(Option::is_some));
            assert!(s.labels().unwrap().iter().all(|&l| (0..4).contains(&l)));
        }
    }

    #[test]
    fn empty_scene_is_all_ground() {
        let none = ObjectPrior {
            count: [0, 0],
            size: [1.0, 1.0],
        };
        let spec = SceneSpec {
            buildings: none,
            vehicles: none,
            trees: none,
            ..SceneSpec::day(2)
        };
        let r = render_scene(&spec, 0).unwrap();
        assert!(r.sample.labels().unwrap().iter().all(|&l| l == GROUND));
        assert!(r.class_map.iter().all(|&c| c == GROUND || c == -1));
        assert!(r.world.solids.is_empty());
    }
}
