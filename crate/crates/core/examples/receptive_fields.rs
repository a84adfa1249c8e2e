//! Effective receptive fields of both branches at foreground points of an
//! occlusion scene, exported as PLY / PPM / TSV.
//!
//! cargo run --release --example receptive_fields -- [OUT_DIR] [CHECKPOINT]

use std::path::PathBuf;

use mm2d3d::erf::{compute_erf, export_erf};
use mm2d3d::nets::{Model, ModelConfig};
use mm2d3d::scene::{generate, SceneSpec};

fn main() -> mm2d3d::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/erf".into()));
    let model = match args.next() {
        Some(p) => Model::load(p)?,
        None => Model::new(ModelConfig::default(), 0)?,
    };
    let s = &generate(&SceneSpec::occlusion(4), 1)?.samples[0];
    let labels = s.labels().expect("generated scenes are labeled");
    let fg: Vec<usize> = (0..s.num_points()).filter(|&i| labels[i] > 0).collect();

    println!("anchor  class  2D@1m  3D@1m  2D@2m  3D@2m");
    for (k, &p) in fg.iter().step_by((fg.len() / 5).max(1)).take(5).enumerate() {
        let r = compute_erf(&model, s, p)?;
        let (a1, b1) = r.locality_at(1.0);
        let (a2, b2) = r.locality_at(2.0);
        println!("{p:>6}  {:>5}  {a1:.3}  {b1:.3}  {a2:.3}  {b2:.3}", labels[p]);
        if k == 0 {
            let f = export_erf(&r, &out)?;
            println!("        exported {}", f.ply.parent().unwrap().display());
        }
    }
    Ok(())
}
