//! Run both branches on one scene and fuse their softmax outputs.

use mm2d3d::geometry::make_sparse_depth;
use mm2d3d::nets::{fuse, Model, ModelConfig};
use mm2d3d::scene::{generate, SceneSpec};
use mm2d3d::train::argmax;

fn main() -> mm2d3d::Result<()> {
    let s = &generate(&SceneSpec::day(21), 1)?.samples[0];
    let model = Model::new(ModelConfig::default(), 0)?;
    println!("{} parameter tensors, {} values", model.params.len(), model.params.num_values());

    let pts = &s.cloud.positions;
    let depth = make_sparse_depth(pts, &s.intrinsics)?;
    let out2d = model.forward_2d(&s.image, &depth, pts, &s.intrinsics)?;
    let out3d = model.forward_3d(pts, s.colors())?;
    let (p2, p3) = (out2d.main_logits.softmax(1)?, out3d.main_logits.softmax(1)?);
    let avg = fuse(&p2, &p3)?;

    let c = model.config.num_classes;
    let count = |p: &[f32]| {
        let mut h = vec![0usize; c];
        p.chunks(c).for_each(|r| h[argmax(r)] += 1);
        h
    };
    println!("points: {}", s.num_points());
    println!("2D  argmax histogram {:?}", count(p2.data()));
    println!("3D  argmax histogram {:?}", count(p3.data()));
    println!("Avg argmax histogram {:?}", count(avg.data()));
    println!("aux heads: 2D {:?}, 3D {:?}", out2d.aux_logits.shape(), out3d.aux_logits.shape());
    Ok(())
}
