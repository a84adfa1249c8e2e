//! Pinhole projection, z-buffered sparse depth and projected labels.

use mm2d3d::geometry::{make_sparse_depth, project, project_labels, Intrinsics};
use mm2d3d::scene::{generate, SceneSpec};

fn main() -> mm2d3d::Result<()> {
    let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100)?;
    let p = project(&[[0.0, 0.0, 5.0], [1.0, 0.0, 5.0]], &k)?;
    println!("(0,0,5) -> {:?}, (1,0,5) -> {:?}", p.uv[0], p.uv[1]);

    let s = &generate(&SceneSpec::day(8), 1)?.samples[0];
    let depth = make_sparse_depth(&s.cloud.positions, &s.intrinsics)?;
    let labels = project_labels(&s.cloud, &s.intrinsics)?;
    let hits = depth.data().iter().filter(|z| **z > 0.0).count();
    println!(
        "{} points cover {hits} of {} pixels; {} labeled pixels",
        s.num_points(),
        depth.len(),
        labels.iter().filter(|l| **l >= 0).count()
    );

    let w = s.intrinsics.width;
    for row in (0..s.intrinsics.height).step_by(4) {
        let line: String = (0..w)
            .step_by(2)
            .map(|c| match labels[row * w + c] {
                -1 => ' ',
                0 => '.',
                1 => '#',
                2 => 'o',
                _ => '*',
            })
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
