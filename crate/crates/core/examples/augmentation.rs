//! Independent 2D and 3D augmentations of one sample.

use mm2d3d::geometry::pixel_locations;
use mm2d3d::scene::{generate, SceneSpec};
use mm2d3d::train::{apply_2d, apply_3d, Aug2d, Aug3d};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mm2d3d::Result<()> {
    let s = &generate(&SceneSpec::day(5), 1)?.samples[0];
    let before = pixel_locations(&s.cloud.positions, &s.intrinsics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let (a2, a3) = (Aug2d::draw(&mut rng), Aug3d::draw(&mut rng));
        let s2 = apply_2d(s, &a2);
        let s3 = apply_3d(s, &a3);
        let after = pixel_locations(&s2.cloud.positions, &s2.intrinsics)?;
        println!(
            "2D flip {:<5} jitter [{:.2}, {:.2}, {:.2}]  first point col {} -> {}",
            a2.flip, a2.jitter[0], a2.jitter[1], a2.jitter[2], before[0].1, after[0].1
        );
        println!(
            "3D flip {:<5} scale {:.3} yaw {:+.2} deg  first point {:?} -> {:?}",
            a3.flip,
            a3.scale,
            a3.yaw.to_degrees(),
            s.cloud.positions[0],
            s3.cloud.positions[0]
        );
        assert_eq!(s2.labels(), s.labels());
        assert_eq!(s3.labels(), s.labels());
    }
    Ok(())
}
